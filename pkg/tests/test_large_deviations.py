import math

import numpy as np
import pytest

from teich_recur.exceptions import (
    DomainError,
    InfeasibleRateError,
    InsufficientDataError,
)
from teich_recur.models import SojournSequence
from teich_recur.services.large_deviations import (
    chernoff_cycle_rate,
    chernoff_outside_rate,
    deviation_rate,
    doubling_grid,
    extract_sojourns,
    limsup_check,
    marginal_mgf_domination,
    occupation_process,
    simulate_occupation_exceedance,
    simulate_sojourn_sequences,
)
from teich_recur.tails import DeterministicTail, EmpiricalTail, ExponentialTail


@pytest.fixture
def eta():
    return ExponentialTail.with_mean(1.0)


@pytest.fixture
def xi():
    return DeterministicTail(2.0)


def test_occupation_process_examples():
    assert occupation_process(SojournSequence([3.0, 1.0, 3.0, 1.0]), 8.0) == pytest.approx(0.25)
    assert occupation_process(SojournSequence([1.0, 1.0] * 5), 6.0) == pytest.approx(0.5)
    assert occupation_process(SojournSequence([2.0, 0.0, 3.0, 0.0]), 5.0) == 0.0
    assert occupation_process(SojournSequence([0.0, 2.0, 2.0]), 3.0) == pytest.approx(2.0 / 3.0)


def test_occupation_process_uses_merged_sojourns():
    seq = SojournSequence([3.0, 0.5, 3.0, 1.5], C_prime=1.0)
    assert occupation_process(seq, 8.0) == pytest.approx(1.5 / 8.0)


def test_occupation_process_domain():
    seq = SojournSequence([1.0, 1.0])
    with pytest.raises(DomainError):
        occupation_process(seq, 0.0)
    with pytest.raises(InsufficientDataError):
        occupation_process(seq, 3.0)


def test_outside_rate_exponential(eta):
    theta1, gamma1 = chernoff_outside_rate(eta, 4.0, 1.0)
    assert theta1 == pytest.approx(0.75, abs=0.01)
    assert gamma1 == pytest.approx(4.0 * math.exp(-3.0), rel=0.01)


def test_outside_rate_deterministic_zero():
    theta1, gamma1 = chernoff_outside_rate(DeterministicTail(0.0), 1.0, 5.0)
    assert gamma1 < 1.0
    assert theta1 == pytest.approx(5.0, rel=1e-3)
    assert gamma1 == pytest.approx(math.exp(-5.0), rel=1e-3)


def test_outside_rate_needs_lambda_above_mean(eta):
    with pytest.raises(InfeasibleRateError):
        chernoff_outside_rate(eta, 1.0, 1.0)


def test_cycle_rate_deterministic(xi):
    theta2, gamma2 = chernoff_cycle_rate(xi, 1.0, 5.0)
    assert theta2 == pytest.approx(5.0, rel=1e-6)
    assert gamma2 == pytest.approx(math.exp(-5.0), rel=1e-6)
    with pytest.raises(InfeasibleRateError):
        chernoff_cycle_rate(xi, 0.5, 5.0)


def test_cycle_rate_empirical_uniform():
    samples = np.random.default_rng(9).uniform(1.0, 3.0, 100_000)
    _, gamma2 = chernoff_cycle_rate(EmpiricalTail(samples), 1.0, 2.0)
    exact = (1.0 - math.exp(-4.0)) / 4.0
    assert gamma2 < 1.0
    assert gamma2 == pytest.approx(exact, rel=0.02)


def test_deviation_rate_synthetic_model(eta, xi):
    rate = deviation_rate(eta, xi, 0.9)
    assert 0.0 < rate.gamma < 1.0
    assert 0.5 < rate.c < 0.9
    assert rate.lambda_prime == pytest.approx(1.8 / rate.c)
    assert rate.theta0 == pytest.approx(1.0)
    coarse = deviation_rate(eta, xi, 0.9, grid=512)
    assert coarse.gamma == pytest.approx(rate.gamma, rel=0.01)


def test_single_rate_dominates_two_term_bound(eta, xi):
    rate = deviation_rate(eta, xi, 0.9)
    for T in (rate.T_min, 2.0 * rate.T_min, 4.0 * rate.T_min):
        assert rate.bound(T) <= rate.gamma ** T * (1.0 + 1e-9)


def test_deviation_rate_infeasible(eta, xi):
    with pytest.raises(InfeasibleRateError):
        deviation_rate(eta, xi, 0.5)


def test_square_wave_sojourns():
    times = np.arange(0.0, 100.5, 0.5)
    values = np.where(times % 10.0 < 5.0, 0.5, 8.0)
    seq = extract_sojourns(times, values, 4.0, 1.0, C_prime=1.0)
    np.testing.assert_allclose(seq.taus[:-1], [5.0, 5.0] * 10)
    np.testing.assert_allclose(seq.merged, seq.taus)
    assert seq.total == pytest.approx(100.0)


def test_short_excursion_is_merged():
    times = np.arange(0.0, 40.5, 0.5)
    values = np.full(times.size, 0.5)
    values[times == 20.0] = 8.0
    seq = extract_sojourns(times, values, 4.0, 1.0, C_prime=1.0)
    np.testing.assert_allclose(seq.taus, [20.0, 0.5, 20.0 - 0.5])
    np.testing.assert_allclose(seq.merged, [20.5, 0.0, 19.5])
    assert seq.merged.sum() == pytest.approx(seq.total)


def test_constant_trace_is_one_inside_sojourn():
    times = np.linspace(0.0, 10.0, 21)
    seq = extract_sojourns(times, np.full(21, 0.5), 4.0, 1.0)
    np.testing.assert_allclose(seq.taus, [10.0])
    assert seq.outside().size == 0


def test_trace_starting_outside_gets_empty_first_sojourn():
    times = np.arange(0.0, 4.0, 1.0)
    seq = extract_sojourns(times, [8.0, 8.0, 0.5, 0.5], 4.0, 1.0)
    np.testing.assert_allclose(seq.taus, [0.0, 2.0, 1.0])


def test_hysteresis_between_levels():
    times = np.arange(0.0, 6.0, 1.0)
    seq = extract_sojourns(times, [0.5, 8.0, 2.0, 3.0, 0.5, 0.5], 4.0, 1.0)
    np.testing.assert_allclose(seq.taus, [1.0, 3.0, 1.0])


def test_extract_sojourns_validation():
    times = np.arange(0.0, 5.0, 1.0)
    with pytest.raises(DomainError):
        extract_sojourns(times, np.ones(5), 1.0, 2.0)
    with pytest.raises(DomainError):
        extract_sojourns(times, np.ones(5), 1.2, 1.0)
    with pytest.raises(DomainError):
        extract_sojourns([0.0, 1.0, 3.0], np.ones(3), 4.0, 1.0)
    with pytest.raises(InsufficientDataError):
        extract_sojourns([0.0], [1.0], 4.0, 1.0)


def test_doubling_grid():
    np.testing.assert_allclose(doubling_grid(25.0, 200.0), [25.0, 50.0, 100.0, 200.0])
    np.testing.assert_allclose(doubling_grid(25.0, 30.0), [25.0])


def test_limsup_check_never_outside():
    sequences = [SojournSequence([100.0]) for _ in range(5)]
    report = limsup_check(0.5, sequences, 0.5)
    np.testing.assert_allclose(report.T_grid, [25.0, 50.0, 100.0])
    assert np.all(report.exceedance == 0.0)
    assert report.non_increasing
    assert report.tail_sum == pytest.approx(0.5 ** 25 + 0.5 ** 50 + 0.5 ** 100)


def test_limsup_check_on_simulated_sequences(eta, xi):
    rate = deviation_rate(eta, xi, 0.9)
    sequences = simulate_sojourn_sequences(eta, xi, 400.0, 200, seed=3)
    report = limsup_check(rate.gamma, sequences, 0.9)
    assert report.final_exceedance == 0.0
    with pytest.raises(DomainError):
        limsup_check(1.5, sequences, 0.9)


def test_simulated_sequences_are_reproducible(eta, xi):
    a = simulate_sojourn_sequences(eta, xi, 50.0, 4, seed=8)
    b = simulate_sojourn_sequences(eta, xi, 50.0, 4, seed=8)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.taus, y.taus)
        assert x.total >= 50.0


def test_simulated_exceedance_respects_bound(eta, xi):
    rate = deviation_rate(eta, xi, 0.9)
    grid = [50.0, 100.0, 200.0]
    curve = simulate_occupation_exceedance(eta, xi, 0.9, grid, 20_000, seed=0, batch_size=5000, workers=2)
    bounds = np.array([rate.bound(T) for T in grid])
    assert np.all(curve.ci_lo <= bounds)
    assert curve.n_total == 20_000


def test_simulated_occupation_concentrates_near_its_mean(eta, xi):
    curve = simulate_occupation_exceedance(eta, xi, 0.2, [200.0], 4000, seed=1)
    assert curve.fractions[0] > 0.9


def test_marginal_mgf_domination(caplog):
    samples = np.random.default_rng(4).exponential(1.0, 100_000)
    thetas = np.linspace(0.0, 0.3, 7)
    report = marginal_mgf_domination(samples, ExponentialTail.with_mean(1.2), thetas)
    assert report.dominated
    assert not report.conditional_checked
    assert "marginally" in caplog.text
    assert not marginal_mgf_domination(samples, DeterministicTail(0.0), thetas).dominated
