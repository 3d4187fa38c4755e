from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from teich_recur.config import DEFAULT_BATCH_SIZE, DEFAULT_GRID, DEFAULT_HYSTERESIS_RATIO, DEFAULT_THETA_CAP
from teich_recur.exceptions import (
    DomainError,
    InfeasibleRateError,
    InsufficientDataError,
    NoRateError,
)
from teich_recur.models import RateResult, SojournSequence
from teich_recur.services.parallel import chunk_sizes, map_work_items, seed_stream
from teich_recur.services.stats import DEFAULT_CONFIDENCE, wilson_interval
from teich_recur.tails import TailModel

logger = logging.getLogger(__name__)

SINGLE_GAMMA_SLACK = 0.01
C_SCAN_POINTS = 16


def _boundaries(seq: SojournSequence) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(seq.merged)])


def occupation_process(seq: SojournSequence, T: float) -> float:
    """Fraction of [0, T] spent outside, read off the merged sojourns."""

    if not T > 0.0:
        raise DomainError(f"T must be positive, got {T}")
    if T > seq.total * (1.0 + 1e-12):
        raise InsufficientDataError(f"T={T} exceeds the sequence length {seq.total}")
    edges = _boundaries(seq)
    starts = edges[1:-1:2]
    ends = edges[2::2]
    overlap = np.clip(np.minimum(ends, T) - starts, 0.0, None)
    return float(min(max(overlap.sum() / T, 0.0), 1.0))


def _refine_minimum(
    objective,
    grid: np.ndarray,
    values: np.ndarray,
    upper: float,
) -> Tuple[float, float]:
    k = int(np.argmin(values))
    best_theta, best_value = float(grid[k]), float(values[k])
    lo = float(grid[max(k - 1, 0)])
    hi = float(grid[k + 1]) if k + 1 < grid.size else upper
    if hi > lo:
        res = minimize_scalar(objective, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
        if res.success and float(res.fun) < best_value:
            best_theta, best_value = float(res.x), float(res.fun)
    return best_theta, best_value


def chernoff_outside_rate(
    eta: TailModel,
    lambda_prime: float,
    theta0: float,
    grid: int = DEFAULT_GRID,
) -> Tuple[float, float]:
    """Minimize F(theta) = E exp(theta (eta - lambda')) on [0, theta0).

    Returns (theta1, gamma') with gamma' = F(theta1) < 1. Grid search first,
    then a bounded scalar refinement around the best grid point.
    """

    if not lambda_prime > eta.mean:
        raise InfeasibleRateError(f"lambda'={lambda_prime} must exceed E(eta)={eta.mean}")
    if not theta0 > 0.0:
        raise DomainError(f"theta0 must be positive, got {theta0}")
    theta0 = min(theta0, eta.theta_limit)
    thetas = np.linspace(0.0, theta0, grid, endpoint=False)
    values = np.asarray(eta.mgf(thetas)) * np.exp(-thetas * lambda_prime)

    def objective(theta: float) -> float:
        return float(eta.mgf(theta)) * math.exp(-theta * lambda_prime)

    upper = theta0 * (1.0 - 1e-9)
    theta1, gamma1 = _refine_minimum(objective, thetas, values, upper)
    if not gamma1 < 1.0:
        raise NoRateError(f"F(theta) >= 1 on [0, {theta0}) for lambda'={lambda_prime}")
    return theta1, gamma1


def chernoff_cycle_rate(
    xi: TailModel,
    c: float,
    theta0: float,
    grid: int = DEFAULT_GRID,
) -> Tuple[float, float]:
    """Minimize G(theta) = E exp(-theta (xi - 1/c)) on [0, theta0]."""

    if not xi.mean > 0.0:
        raise DomainError("E(xi) must be positive")
    if not c > 1.0 / xi.mean:
        raise InfeasibleRateError(f"c={c} must exceed 1/E(xi)={1.0 / xi.mean}")
    if not theta0 > 0.0:
        raise DomainError(f"theta0 must be positive, got {theta0}")
    thetas = np.linspace(0.0, theta0, grid)
    values = np.asarray(xi.mgf(-thetas)) * np.exp(thetas / c)

    def objective(theta: float) -> float:
        return float(xi.mgf(-theta)) * math.exp(theta / c)

    theta2, gamma2 = _refine_minimum(objective, thetas, values, theta0)
    if not gamma2 < 1.0:
        raise NoRateError(f"G(theta) >= 1 on [0, {theta0}] for c={c}")
    return theta2, gamma2


def _rate_for_c(
    eta: TailModel,
    xi: TailModel,
    lam: float,
    c: float,
    theta0: float,
    grid: int,
) -> Optional[RateResult]:
    try:
        theta1, gamma1 = chernoff_outside_rate(eta, 2.0 * lam / c, theta0, grid)
        theta2, gamma2 = chernoff_cycle_rate(xi, c, theta0, grid)
    except (InfeasibleRateError, NoRateError):
        return None
    base = max(gamma1 ** (c / 2.0), gamma2 ** c)
    if not 0.0 < base < 1.0:
        return None
    gamma = base ** (1.0 - SINGLE_GAMMA_SLACK)
    # gamma'^floor(cT/2) <= gamma'^(cT/2) / gamma', so bound(T) <= (1 + 1/gamma') base^T
    T_min = max(2.0 * math.log(2.0), math.log1p(1.0 / gamma1)) / (SINGLE_GAMMA_SLACK * abs(math.log(base)))
    return RateResult(
        theta_star=theta1,
        gamma_outside=gamma1,
        theta_cycle=theta2,
        gamma_cycle=gamma2,
        c=c,
        lambda_prime=2.0 * lam / c,
        gamma=gamma,
        T_min=T_min,
        theta0=theta0,
    )


def deviation_rate(
    eta: TailModel,
    xi: TailModel,
    lam: float,
    theta0: Optional[float] = None,
    grid: int = DEFAULT_GRID,
    theta_cap: float = DEFAULT_THETA_CAP,
) -> RateResult:
    """Single exponential rate for P(occupation over [0, T] > lambda).

    c ranges over (1/E xi, lambda/E eta); the midpoint and a 16-point scan are
    tried, then the best one is refined. The reported gamma satisfies
    bound(T) <= gamma^T for T >= T_min.

    Complexity: O(grid) MGF evaluations per candidate c.
    """

    if not xi.mean > 0.0:
        raise DomainError("E(xi) must be positive")
    if not lam > eta.mean / xi.mean:
        raise InfeasibleRateError(
            f"lambda={lam} must exceed E(eta)/E(xi)={eta.mean / xi.mean:.6g}"
        )
    if theta0 is None:
        theta0 = min(eta.theta_limit, theta_cap)
    if not theta0 > 0.0:
        raise NoRateError("no positive theta with a usable MGF estimate")

    lo = 1.0 / xi.mean
    hi = lam / eta.mean if eta.mean > 0.0 else 4.0 / xi.mean
    candidates = [0.5 * (lo + hi)] + list(np.linspace(lo, hi, C_SCAN_POINTS + 2)[1:-1])
    results = [(c, _rate_for_c(eta, xi, lam, float(c), theta0, grid)) for c in candidates]
    feasible = [(c, r) for c, r in results if r is not None]
    if not feasible:
        raise NoRateError(f"no c in ({lo:.6g}, {hi:.6g}) gives a rate below 1")
    best_c, best = min(feasible, key=lambda item: item[1].gamma)

    def objective(c: float) -> float:
        r = _rate_for_c(eta, xi, lam, c, theta0, grid)
        return 2.0 if r is None else r.gamma

    step = (hi - lo) / (C_SCAN_POINTS + 1)
    bracket = (max(lo + 1e-12, best_c - step), min(hi - 1e-12, best_c + step))
    res = minimize_scalar(objective, bounds=bracket, method="bounded", options={"xatol": 1e-6})
    if res.success and float(res.fun) < best.gamma:
        refined = _rate_for_c(eta, xi, lam, float(res.x), theta0, grid)
        if refined is not None:
            best = refined
    logger.info(
        "deviation rate for lambda=%.4g: gamma=%.6g at c=%.4g (T_min=%.4g)",
        lam,
        best.gamma,
        best.c,
        best.T_min,
    )
    return best


def _trace_arrays(times: Sequence[float], values: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape or t.ndim != 1:
        raise DomainError("times and values must be matching one-dimensional arrays")
    if t.size < 2:
        raise InsufficientDataError("a V trace needs at least two samples")
    steps = np.diff(t)
    if np.any(steps <= 0.0) or not np.allclose(steps, steps[0], rtol=1e-6, atol=0.0):
        raise DomainError("V trace must be sampled at a uniform step")
    return t, v


def extract_sojourns(
    times: Sequence[float],
    values: Sequence[float],
    l: float,
    l0: float,
    C_prime: float = 0.0,
    min_ratio: float = DEFAULT_HYSTERESIS_RATIO,
) -> SojournSequence:
    """Alternating inside/outside durations from a sampled V trace.

    Inside until V exceeds l, then outside until V drops to l0 or below. A trace
    that starts outside gets a zero-length first inside sojourn.
    """

    if not l > l0 > 0.0:
        raise DomainError(f"levels must satisfy l > l0 > 0, got l={l}, l0={l0}")
    if l / l0 < min_ratio:
        raise DomainError(f"l/l0 = {l / l0:.4g} is below the required ratio {min_ratio}")
    t, v = _trace_arrays(times, values)

    inside = bool(v[0] <= l)
    taus: List[float] = [] if inside else [0.0]
    last = t[0]
    for k in range(1, t.size):
        if inside and v[k] > l:
            taus.append(t[k] - last)
            last, inside = t[k], False
        elif not inside and v[k] <= l0:
            taus.append(t[k] - last)
            last, inside = t[k], True
    taus.append(t[-1] - last)
    return SojournSequence(np.array(taus), C_prime)


@dataclass
class LimsupReport:
    T_grid: np.ndarray
    exceedance: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    gamma: float
    tail_sum: float
    non_increasing: bool

    @property
    def final_exceedance(self) -> float:
        return float(self.exceedance[-1])


def doubling_grid(T_first: float, T_last: float) -> np.ndarray:
    if not 0.0 < T_first <= T_last:
        raise DomainError("doubling grid needs 0 < T_first <= T_last")
    count = int(math.floor(math.log2(T_last / T_first))) + 1
    return T_first * 2.0 ** np.arange(count)


def limsup_check(
    gamma: float,
    sequences: Sequence[SojournSequence],
    lam: float,
    T_first: float = 25.0,
    confidence: float = DEFAULT_CONFIDENCE,
) -> LimsupReport:
    """Fraction of sequences whose occupation exceeds lambda on a doubling grid.

    The grid stops at the shortest sequence. ``tail_sum`` is sum gamma^T over
    the grid, the quantity whose convergence drives the almost-sure statement.
    """

    if not 0.0 < gamma < 1.0:
        raise DomainError(f"gamma must lie in (0, 1), got {gamma}")
    if not sequences:
        raise InsufficientDataError("no sojourn sequences supplied")
    horizon = min(seq.total for seq in sequences)
    T_grid = doubling_grid(min(T_first, horizon), horizon)
    hits = np.array(
        [[occupation_process(seq, float(T)) > lam for seq in sequences] for T in T_grid]
    ).sum(axis=1)
    n = len(sequences)
    ci_lo, ci_hi = wilson_interval(hits, n, confidence)
    frac = hits / float(n)
    width = ci_hi - ci_lo
    non_increasing = bool(np.all(np.diff(frac) <= 2.0 * np.maximum(width[1:], width[:-1]) + 1e-15))
    return LimsupReport(
        T_grid=T_grid,
        exceedance=frac,
        ci_lo=ci_lo,
        ci_hi=ci_hi,
        gamma=gamma,
        tail_sum=float(np.sum(gamma ** T_grid)),
        non_increasing=non_increasing,
    )


def _sojourn_matrix(
    eta: TailModel,
    xi: TailModel,
    T_total: float,
    size: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Rows of interleaved (inside, outside) durations covering T_total.

    Inside durations are xi samples and outside durations eta samples, so each
    cycle is at least xi and each outside sojourn is distributed as eta.
    """

    n_cycles = int(math.ceil(T_total / max(xi.mean, 1e-12))) + 8
    while True:
        inside = xi.sample(rng, size * n_cycles).reshape(size, n_cycles)
        outside = eta.sample(rng, size * n_cycles).reshape(size, n_cycles)
        taus = np.empty((size, 2 * n_cycles))
        taus[:, 0::2] = inside
        taus[:, 1::2] = outside
        if taus.sum(axis=1).min() >= T_total:
            return taus
        n_cycles *= 2


def simulate_sojourn_sequences(
    eta: TailModel,
    xi: TailModel,
    T_total: float,
    n: int,
    seed: int,
) -> List[SojournSequence]:
    rng = seed_stream(seed, 0)
    return [SojournSequence(row) for row in _sojourn_matrix(eta, xi, T_total, n, rng)]


def _batch_occupations(taus: np.ndarray, T_grid: np.ndarray) -> np.ndarray:
    edges = np.concatenate([np.zeros((taus.shape[0], 1)), np.cumsum(taus, axis=1)], axis=1)
    starts = edges[:, 1:-1:2]
    ends = edges[:, 2::2]
    out = np.empty((taus.shape[0], T_grid.size))
    for j, T in enumerate(T_grid):
        out[:, j] = np.clip(np.minimum(ends, T) - starts, 0.0, None).sum(axis=1) / T
    return out


@dataclass
class ExceedanceCurve:
    T_grid: np.ndarray
    counts: np.ndarray
    n_total: int
    ci_lo: np.ndarray
    ci_hi: np.ndarray

    @property
    def fractions(self) -> np.ndarray:
        return self.counts / float(self.n_total)


def simulate_occupation_exceedance(
    eta: TailModel,
    xi: TailModel,
    lam: float,
    T_grid: Sequence[float],
    n: int,
    seed: int,
    batch_size: int = DEFAULT_BATCH_SIZE,
    workers: int = 1,
    confidence: float = DEFAULT_CONFIDENCE,
) -> ExceedanceCurve:
    """Monte-Carlo P(occupation over [0, T] > lambda) for every T in the grid."""

    grid = np.asarray(T_grid, dtype=float)
    sizes = chunk_sizes(n, batch_size)

    def run(k: int) -> np.ndarray:
        taus = _sojourn_matrix(eta, xi, float(grid.max()), sizes[k], seed_stream(seed, k))
        return (_batch_occupations(taus, grid) > lam).sum(axis=0)

    counts = np.sum(map_work_items(run, range(len(sizes)), workers), axis=0)
    ci_lo, ci_hi = wilson_interval(counts, n, confidence)
    return ExceedanceCurve(grid, counts, n, ci_lo, ci_hi)


@dataclass(frozen=True)
class MgfDominationReport:
    dominated: bool
    worst_ratio: float
    worst_theta: float
    conditional_checked: bool = False


def marginal_mgf_domination(
    samples: Sequence[float],
    model: TailModel,
    theta_grid: Sequence[float],
    tolerance: float = 0.05,
) -> MgfDominationReport:
    """Check E exp(theta X) <= model MGF on the grid for observed samples.

    Only the unconditional MGF is compared; domination given the past is not
    tested and the report says so.
    """

    observed = np.asarray(samples, dtype=float)
    if observed.size == 0:
        raise InsufficientDataError("no samples to compare")
    thetas = np.asarray(theta_grid, dtype=float)
    bound = np.asarray(model.mgf(thetas))
    empirical = np.array([np.exp(th * observed).mean() for th in thetas])
    ratios = empirical / bound
    k = int(np.argmax(ratios))
    logger.warning("MGF domination checked marginally only; conditional domination is not verified")
    return MgfDominationReport(
        dominated=bool(np.all(ratios <= 1.0 + tolerance)),
        worst_ratio=float(ratios[k]),
        worst_theta=float(thetas[k]),
    )
