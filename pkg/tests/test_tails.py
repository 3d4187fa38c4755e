import math

import numpy as np
import pytest

from teich_recur.exceptions import ConfigError, DomainError
from teich_recur.models import TailKind
from teich_recur.tails import (
    DeterministicTail,
    EmpiricalTail,
    ExponentialTail,
    get_tail_model,
    parse_tail_spec,
)


def test_exponential_with_mean():
    tail = ExponentialTail.with_mean(2.0)
    assert tail.mean == pytest.approx(2.0)
    assert tail.theta_limit == pytest.approx(0.5)
    assert tail.mgf(0.25) == pytest.approx(2.0)
    assert math.isinf(tail.mgf(0.5))
    np.testing.assert_allclose(tail.mgf(np.array([0.0, 0.25])), [1.0, 2.0])


def test_exponential_tail_with_atom():
    tail = ExponentialTail(2.0, 1.0, 1.0)
    mass = 2.0 * math.exp(-1.0)
    assert tail.tail_mass == pytest.approx(mass)
    assert tail.mean == pytest.approx(mass * 2.0)
    samples = tail.sample(np.random.default_rng(0), 200_000)
    assert samples.mean() == pytest.approx(tail.mean, rel=0.02)
    assert np.mean(samples == 0.0) == pytest.approx(1.0 - mass, abs=0.01)
    assert samples[samples > 0.0].min() >= 1.0


def test_exponential_tail_rejects_excess_mass():
    with pytest.raises(DomainError):
        ExponentialTail(5.0, 1.0, 0.0)
    with pytest.raises(DomainError):
        ExponentialTail(1.0, -1.0)
    with pytest.raises(DomainError):
        ExponentialTail.with_mean(0.0)


def test_deterministic_tail():
    tail = DeterministicTail(2.0)
    assert tail.mgf(-1.0) == pytest.approx(math.exp(-2.0))
    assert tail.mgf(np.zeros((2, 3))).shape == (2, 3)
    assert math.isinf(tail.theta_limit)
    np.testing.assert_array_equal(tail.sample(np.random.default_rng(0), 3), [2.0, 2.0, 2.0])
    with pytest.raises(DomainError):
        DeterministicTail(-1.0)


def test_empirical_mgf_matches_uniform():
    samples = np.random.default_rng(5).uniform(1.0, 3.0, 100_000)
    tail = EmpiricalTail(samples)
    exact = (math.exp(-2.0) - math.exp(-6.0)) / 4.0
    assert tail.mgf(-2.0) == pytest.approx(exact, rel=0.01)
    assert tail.mgf(0.0) == pytest.approx(1.0)
    assert tail.mean == pytest.approx(2.0, rel=0.01)
    assert 0.0 < tail.theta_limit <= tail.theta_cap


def test_empirical_theta_limit_for_constant_samples():
    assert EmpiricalTail([3.0, 3.0, 3.0], theta_cap=10.0).theta_limit == pytest.approx(10.0)


def test_empirical_theta_limit_shrinks_with_heavy_samples():
    samples = np.random.default_rng(1).exponential(1.0, 2000)
    tail = EmpiricalTail(samples, theta_cap=5.0)
    assert tail.theta_limit < 1.0


def test_empirical_validation():
    with pytest.raises(DomainError):
        EmpiricalTail([])
    with pytest.raises(DomainError):
        EmpiricalTail([1.0, -0.5])


def test_tail_model_factory():
    assert isinstance(get_tail_model(TailKind.DETERMINISTIC, value=1.0), DeterministicTail)
    assert isinstance(get_tail_model("exponential-tail", a1=1.0, a2=2.0), ExponentialTail)
    with pytest.raises(ValueError, match="Unknown tail kind"):
        get_tail_model("gamma")


def test_parse_tail_spec(tmp_path):
    assert parse_tail_spec("exp:1").mean == pytest.approx(1.0)
    assert parse_tail_spec("det:2").mean == pytest.approx(2.0)
    tail = parse_tail_spec("exptail:1,2,0.5")
    assert (tail.a1, tail.a2, tail.cutoff) == (1.0, 2.0, 0.5)
    path = tmp_path / "samples.txt"
    path.write_text("# outside times\n1.0\n2.0\n3.0\n")
    assert parse_tail_spec(f"emp:{path}").mean == pytest.approx(2.0)


@pytest.mark.parametrize(
    "text",
    ["exp", "exp:", "exp:-1", "exp:abc", "gamma:1", "exptail:1,2", "exptail:5,1,0", "emp:/no/such/file"],
)
def test_parse_tail_spec_errors_name_the_key(text):
    with pytest.raises(ConfigError) as info:
        parse_tail_spec(text, key="eta")
    assert info.value.key == "eta"
