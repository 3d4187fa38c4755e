import pytest

from teich_recur.main import seed_builtin_surfaces
from teich_recur.models import WalkConfig
from teich_recur.services.markov_drift import fixture_chain
from teich_recur.services.surface_io import regular_octagon, square_torus, three_square_origami

seed_builtin_surfaces()


@pytest.fixture
def torus():
    return square_torus()


@pytest.fixture
def origami3():
    return three_square_origami()


@pytest.fixture(scope="session")
def octagon():
    return regular_octagon()


@pytest.fixture
def chain():
    return fixture_chain()


@pytest.fixture
def walk_cfg():
    return WalkConfig(tau=2.0, delta=0.5, l=4.0, l0=2.0, n_steps=20, n_trials=4, seed=7, dt=0.05)
