import math

import numpy as np
import pytest

from teich_recur.exceptions import DomainError, NoDriftDetectedError, PreconditionError
from teich_recur.models import DriftCondition
from teich_recur.services.markov_drift import (
    FIXTURE_DRIFT,
    ChainModel,
    FiniteChain,
    SurvivalCounts,
    burn_in_steps,
    estimate_drift,
    hitting_tail_bound,
    iterated_drift_bound,
    occupation_lower_bound,
    tightness_level,
    uniform_level,
    verify_hitting_bound,
)

DC = DriftCondition(0.5, 1.0)


def test_hitting_tail_bound_arithmetic():
    bound = hitting_tail_bound(8.0, DC, 4.0, 3)
    assert bound.value == pytest.approx(0.84375)
    assert bound.factor == pytest.approx(0.75)
    assert bound.contractive
    assert hitting_tail_bound(8.0, DC, 4.0, 0).value == pytest.approx(2.0)


def test_hitting_tail_bound_at_critical_level(caplog):
    bound = hitting_tail_bound(3.0, DC, DC.b_prime, 5)
    assert bound.factor == pytest.approx(1.0)
    assert not bound.contractive
    assert "does not decay" in caplog.text


def test_hitting_tail_bound_preconditions():
    with pytest.raises(PreconditionError):
        hitting_tail_bound(4.0, DC, 4.0, 1)
    with pytest.raises(DomainError):
        hitting_tail_bound(8.0, DC, 0.0, 1)
    with pytest.raises(DomainError):
        hitting_tail_bound(8.0, DC, 4.0, -1)


def test_iterated_drift_bound():
    assert iterated_drift_bound(10.0, DC, 4) == pytest.approx(2.625)
    assert iterated_drift_bound(10.0, DC, 0) == pytest.approx(12.0)
    assert iterated_drift_bound(10.0, DC, 200) == pytest.approx(DC.b_prime)


def test_levels():
    assert tightness_level(3.0, DC, 0.1) == pytest.approx(50.0)
    assert tightness_level(3.0, DC, 1.0) == pytest.approx(5.0)
    assert uniform_level(DC, 0.1) == pytest.approx(40.0)
    with pytest.raises(DomainError):
        uniform_level(DC, 0.0)


def test_burn_in_steps():
    assert burn_in_steps(1024.0, DC) == 9
    assert burn_in_steps(1.0, DC) == 0


@pytest.mark.parametrize("V_x", [math.inf, math.nan])
def test_burn_in_steps_rejects_non_finite_start(V_x):
    with pytest.raises(DomainError):
        burn_in_steps(V_x, DC)


@pytest.mark.parametrize("E_Sn, lam, expected", [(1.0, 0.5, 1.0), (0.8, 0.8, 0.0), (0.95, 0.8, 0.75), (0.2, 0.5, 0.0)])
def test_occupation_lower_bound(E_Sn, lam, expected):
    assert occupation_lower_bound(E_Sn, lam) == pytest.approx(expected)


def test_fixture_satisfies_its_drift(chain):
    assert np.all(chain.expected_next_V() <= FIXTURE_DRIFT.c * chain.V + FIXTURE_DRIFT.b + 1e-12)


@pytest.mark.parametrize("m", range(7))
def test_iterated_expectation_below_bound(chain, m):
    exact = chain.iterated_expectation(m)
    bounds = np.array([iterated_drift_bound(v, FIXTURE_DRIFT, m) for v in chain.V])
    assert np.all(exact <= bounds + 1e-9)


@pytest.mark.parametrize("l", [4.0, 8.0, 16.0])
def test_exact_survival_below_bound(chain, l):
    survival = chain.exact_survival(7, l, 100)
    bounds = np.array([hitting_tail_bound(chain.V[7], FIXTURE_DRIFT, l, n).value for n in range(101)])
    assert survival[0] == 1.0
    assert np.all(np.diff(survival) <= 1e-15)
    assert np.all(survival <= bounds + 1e-12)


def test_exact_survival_rejects_inside_start(chain):
    with pytest.raises(PreconditionError):
        chain.exact_survival(0, 8.0, 10)


def test_occupation_distribution_is_a_law(chain):
    dist = chain.occupation_distribution(7, 8.0, 12)
    assert dist.shape == (13,)
    assert dist.sum() == pytest.approx(1.0)
    assert np.all(dist >= 0.0)


def test_tail_probability(chain):
    assert chain.tail_probability(7, 8.0, 0) == 1.0
    assert 0.0 <= chain.tail_probability(7, 8.0, 20) <= 1.0


def test_finite_chain_validation():
    with pytest.raises(DomainError):
        FiniteChain([[0.5, 0.4], [0.0, 1.0]], [1.0, 2.0])
    with pytest.raises(DomainError):
        FiniteChain([[1.0]], [1.0, 2.0])


def test_simulation_matches_transition_matrix(chain):
    paths = chain.simulate(1, 1, 50_000, np.random.default_rng(2))
    assert paths.shape == (50_000, 2)
    assert np.mean(paths[:, 1] == 0) == pytest.approx(0.99, abs=0.005)


def test_survival_counts_merge():
    total = SurvivalCounts(10, np.array([10, 5])) + SurvivalCounts(30, np.array([30, 5]))
    assert total.trials == 40
    np.testing.assert_allclose(total.p_hat, [1.0, 0.25])


def test_verify_hitting_bound_on_fixture(chain):
    report = verify_hitting_bound(chain.as_chain_model(), FIXTURE_DRIFT, 8.0, 7, 30, 20_000, seed=1, batch_size=5000)
    assert report.passed
    assert report.counts.trials == 20_000
    assert report.V_start == 128.0
    rows = report.rows()
    assert len(rows) == 31
    assert rows[0]["p_hat"] == 1.0
    exact = chain.exact_survival(7, 8.0, 30)
    np.testing.assert_allclose(report.counts.p_hat, exact, atol=0.02)


def test_verify_is_reproducible_across_workers(chain):
    model = chain.as_chain_model()
    one = verify_hitting_bound(model, FIXTURE_DRIFT, 8.0, 7, 10, 4000, seed=3, batch_size=1000, workers=1)
    many = verify_hitting_bound(model, FIXTURE_DRIFT, 8.0, 7, 10, 4000, seed=3, batch_size=1000, workers=4)
    np.testing.assert_array_equal(one.counts.survivors, many.counts.survivors)


def test_verify_scalar_path_matches_bound(chain):
    scalar = ChainModel(sampler=chain.as_chain_model().sampler, lyapunov=lambda s: float(chain.V[int(s)]))
    report = verify_hitting_bound(scalar, FIXTURE_DRIFT, 8.0, 7, 15, 500, seed=4)
    assert report.passed


def test_verify_rejects_inside_start(chain):
    with pytest.raises(PreconditionError):
        verify_hitting_bound(chain.as_chain_model(), FIXTURE_DRIFT, 8.0, 0, 10, 100, seed=0)


def test_estimate_drift_constant_chain():
    frozen = ChainModel(sampler=lambda state, rng: state, lyapunov=lambda state: 5.0)
    dc = estimate_drift(frozen, [0], 100, seed=0)
    assert dc.c == pytest.approx(1e-6)
    assert dc.b == pytest.approx(5.0, rel=1e-5)


def test_estimate_drift_envelope_dominates_fixture(chain):
    dc = estimate_drift(chain.as_chain_model(), list(range(8)), 4000, seed=0, workers=2)
    assert dc.c < 1.0
    assert np.all(dc.c * chain.V + dc.b >= chain.expected_next_V())


def test_estimate_drift_detects_growth():
    doubling = ChainModel(
        sampler=lambda state, rng: state * 2.0 * rng.uniform(0.9, 1.1),
        lyapunov=lambda state: float(state),
    )
    with pytest.raises(NoDriftDetectedError):
        estimate_drift(doubling, [1.0, 4.0, 16.0], 200, seed=0)


def test_estimate_drift_validation(chain):
    with pytest.raises(DomainError):
        estimate_drift(chain.as_chain_model(), [1], 10, seed=0)
    with pytest.raises(DomainError):
        estimate_drift(chain.as_chain_model(), [], 100, seed=0)


def test_burn_in_reaches_the_drift_floor(chain):
    m = burn_in_steps(chain.V[7], FIXTURE_DRIFT)
    assert FIXTURE_DRIFT.c ** m * chain.V[7] <= FIXTURE_DRIFT.b_prime
    assert m == int(math.ceil(math.log2(chain.V[7] / FIXTURE_DRIFT.b_prime)))
