from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from teich_recur.exceptions import (
    DomainError,
    InsufficientDataError,
    LevelTooSmallError,
    PreconditionError,
)
from teich_recur.models import RateResult, SojournSequence, TailCurve, TrajectoryRecord, WalkConfig
from teich_recur.services.flat_surface import TranslationSurface, apply_linear
from teich_recur.services.hyperbolic import Isometry2
from teich_recur.services.large_deviations import deviation_rate, extract_sojourns
from teich_recur.services.markov_drift import ChainModel, HittingBound
from teich_recur.services.oracles import (
    ShortestSaddleOracle,
    geodesic_matrices,
    oracle_for_surface,
    rotation_matrices,
)
from teich_recur.services.parallel import map_work_items, seed_stream
from teich_recur.services.stats import DEFAULT_CONFIDENCE, loglinear_fit, wilson_interval
from teich_recur.tails import EmpiricalTail

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
EFFECTIVE_RATE_GRID = 64
FAN_CHUNK = 256


def walk_step(s: TranslationSurface, tau: float, theta: float) -> TranslationSurface:
    """g_tau r_theta s."""
    return apply_linear(s, Isometry2.geodesic(tau) @ Isometry2.rotation(theta))


def walk_chain(
    surface: TranslationSurface,
    tau: float,
    delta: float,
    oracle: Optional[ShortestSaddleOracle] = None,
) -> ChainModel:
    """The walk as a ChainModel whose states are oracle states."""

    if not tau > 0.0:
        raise DomainError(f"tau must be positive, got {tau}")
    oracle = oracle or oracle_for_surface(surface)
    g = geodesic_matrices(tau)

    def batch_sampler(states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        thetas = rng.uniform(0.0, TWO_PI, states.shape[0])
        return oracle.advance(states, g @ rotation_matrices(thetas))

    def batch_lyapunov(states: np.ndarray) -> np.ndarray:
        return oracle.v0(states, delta)[0]

    return ChainModel(
        sampler=lambda state, rng: batch_sampler(np.asarray(state)[None, ...], rng)[0],
        lyapunov=lambda state: float(batch_lyapunov(np.asarray(state)[None, ...])[0]),
        batch_sampler=batch_sampler,
        batch_lyapunov=batch_lyapunov,
    )


def _walk_batch(
    oracle: ShortestSaddleOracle,
    cfg: WalkConfig,
    trials: Sequence[int],
) -> List[TrajectoryRecord]:
    count = len(trials)
    thetas = np.array(
        [seed_stream(cfg.seed, trial).uniform(0.0, TWO_PI, cfg.n_steps) for trial in trials]
    ).reshape(count, cfg.n_steps)
    g = geodesic_matrices(cfg.tau)
    states = oracle.initial_state(count)
    values = np.empty((count, cfg.n_steps + 1))
    values[:, 0], ok = oracle.v0(states, cfg.delta)
    stop = np.where(ok, cfg.n_steps + 1, 0)
    for n in range(cfg.n_steps):
        states = oracle.advance(states, g @ rotation_matrices(thetas[:, n]))
        values[:, n + 1], ok = oracle.v0(states, cfg.delta)
        stop = np.where((stop == cfg.n_steps + 1) & ~ok, n + 1, stop)

    records = []
    for k, trial in enumerate(trials):
        end = int(stop[k])
        truncated = end <= cfg.n_steps
        if truncated:
            logger.warning("walk trial %d truncated at step %d (uncertified length)", trial, end)
            end = max(end, 1)
        records.append(
            TrajectoryRecord(
                times=np.arange(end, dtype=float),
                V_values=values[k, :end],
                theta=thetas[k, : end - 1],
                truncated=truncated,
            )
        )
    return records


def run_walk(
    s0: TranslationSurface,
    cfg: WalkConfig,
    trial: int = 0,
    oracle: Optional[ShortestSaddleOracle] = None,
) -> TrajectoryRecord:
    """V along X_{n+1} = g_tau r_{theta_n} X_n with theta_n uniform.

    Angles come from the (seed, trial) stream, so a trial is reproducible on
    its own. Times are step indices.
    """

    return _walk_batch(oracle or oracle_for_surface(s0), cfg, [trial])[0]


def run_walks(
    s0: TranslationSurface,
    cfg: WalkConfig,
    workers: int = 1,
    oracle: Optional[ShortestSaddleOracle] = None,
) -> List[TrajectoryRecord]:
    oracle = oracle or oracle_for_surface(s0)
    trials = list(range(cfg.n_trials))
    chunks = [trials[k:k + FAN_CHUNK] for k in range(0, len(trials), FAN_CHUNK)]
    parts = map_work_items(lambda chunk: _walk_batch(oracle, cfg, chunk), chunks, workers)
    return [record for part in parts for record in part]


def fan_angles(n_angles: int) -> np.ndarray:
    return TWO_PI * np.arange(n_angles) / n_angles


def _fan_batch(
    oracle: ShortestSaddleOracle,
    angles: np.ndarray,
    n_times: int,
    dt: float,
    delta: float,
) -> List[TrajectoryRecord]:
    states = oracle.advance(oracle.initial_state(angles.size), rotation_matrices(angles))
    g_dt = geodesic_matrices(dt)
    values = np.empty((angles.size, n_times))
    stop = np.full(angles.size, n_times)
    for k in range(n_times):
        if k:
            states = oracle.advance(states, g_dt)
        values[:, k], ok = oracle.v0(states, delta)
        stop = np.where((stop == n_times) & ~ok, k, stop)

    records = []
    for j, theta in enumerate(angles):
        end = max(int(stop[j]), 1)
        records.append(
            TrajectoryRecord(
                times=dt * np.arange(end),
                V_values=values[j, :end],
                theta=np.array([theta]),
                truncated=end < n_times,
            )
        )
    return records


def run_flow_fan(
    s0: TranslationSurface,
    n_angles: int,
    T: float,
    cfg: WalkConfig,
    workers: int = 1,
    oracle: Optional[ShortestSaddleOracle] = None,
) -> List[TrajectoryRecord]:
    """Trajectories g_t r_theta s0, t = 0, dt, ..., T, for theta = 2 pi k / n."""

    if n_angles < 2:
        raise DomainError(f"n_angles must be at least 2, got {n_angles}")
    if T < 0.0:
        raise DomainError(f"T must be non-negative, got {T}")
    oracle = oracle or oracle_for_surface(s0)
    n_times = int(math.floor(T / cfg.dt + 1e-9)) + 1
    angles = fan_angles(n_angles)
    chunks = [angles[k:k + FAN_CHUNK] for k in range(0, n_angles, FAN_CHUNK)]
    parts = map_work_items(
        lambda chunk: _fan_batch(oracle, chunk, n_times, cfg.dt, cfg.delta), chunks, workers
    )
    records = [record for part in parts for record in part]
    truncated = sum(record.truncated for record in records)
    if truncated:
        logger.warning("%d of %d fan trajectories truncated", truncated, n_angles)
    return records


def _fan_matrix(fan: Sequence[TrajectoryRecord]) -> np.ndarray:
    """V values on the common time grid; truncated tails hold their last value."""
    if not fan:
        raise InsufficientDataError("empty fan")
    n_times = max(record.times.size for record in fan)
    out = np.empty((len(fan), n_times))
    for j, record in enumerate(fan):
        out[j, : record.V_values.size] = record.V_values
        out[j, record.V_values.size:] = record.V_values[-1]
    return out


def _fan_times(fan: Sequence[TrajectoryRecord]) -> np.ndarray:
    return max((record.times for record in fan), key=lambda t: t.size)


def _tail_curve(
    times: np.ndarray,
    counts: np.ndarray,
    n_total: int,
    overlay: Optional[np.ndarray] = None,
    confidence: float = DEFAULT_CONFIDENCE,
) -> TailCurve:
    ci_lo, ci_hi = wilson_interval(counts, n_total, confidence)
    fractions = counts / float(n_total)
    fit = loglinear_fit(times, fractions)
    return TailCurve(
        times=times,
        fractions=fractions,
        counts=counts,
        n_total=n_total,
        ci_lo=ci_lo,
        ci_hi=ci_hi,
        bound_overlay=overlay,
        rate=fit.rate,
        intercept=fit.intercept,
        r_squared=fit.r_squared,
    )


def first_hit_tail(
    fan: Sequence[TrajectoryRecord],
    l: float,
    delta: Optional[float] = None,
) -> TailCurve:
    """Fraction of angles with no visit to {V <= l} up to each sampled T.

    With delta given, the overlay is the shape-only (V(s0)/l) exp(-2(1 - delta) T);
    flow time T is hyperbolic distance 2T.
    """

    values = _fan_matrix(fan)
    times = _fan_times(fan)
    if np.any(values[:, 0] <= l):
        logger.warning("start lies inside {V <= %s}; the curve starts below 1", l)
    survived = np.logical_and.accumulate(values > l, axis=1)
    counts = survived.sum(axis=0)
    overlay = None
    if delta is not None:
        overlay = (values[0, 0] / l) * np.exp(-2.0 * (1.0 - delta) * times)
    return _tail_curve(times, counts, len(fan), overlay)


def walk_return_tail(
    walks: Sequence[TrajectoryRecord],
    l: float,
    factor: Optional[float] = None,
) -> TailCurve:
    """Fraction of walks not yet back in {V <= l} after n steps.

    With ``factor`` given the overlay is (V(x)/l) factor^n.
    """

    values = _fan_matrix(walks)
    steps = _fan_times(walks)
    counts = np.logical_and.accumulate(values > l, axis=1).sum(axis=0)
    overlay = None if factor is None else (values[0, 0] / l) * factor ** steps
    return _tail_curve(steps, counts, len(walks), overlay)


def window_miss_curve(fan: Sequence[TrajectoryRecord], S: float, l: float) -> TailCurve:
    """Fraction of angles avoiding {V <= l} on [S, S + T] for every sampled T."""

    if S < 0.0:
        raise DomainError(f"S must be non-negative, got {S}")
    values = _fan_matrix(fan)
    times = _fan_times(fan)
    dt = times[1] - times[0] if times.size > 1 else 1.0
    start = int(round(S / dt))
    if start >= times.size:
        raise InsufficientDataError(f"fan ends before S={S}")
    window = values[:, start:] > l
    counts = np.logical_and.accumulate(window, axis=1).sum(axis=0)
    return _tail_curve(times[start:] - times[start], counts, len(fan))


def window_miss_fraction(
    s0: TranslationSurface,
    S: float,
    T: float,
    cfg: WalkConfig,
    n_angles: int = 256,
    workers: int = 1,
) -> float:
    if S < 0.0 or T < 0.0:
        raise DomainError("S and T must be non-negative")
    fan = run_flow_fan(s0, n_angles, S + T, cfg, workers=workers)
    curve = window_miss_curve(fan, S, cfg.l)
    return float(curve.fractions[-1])


def occupation_tail(fan: Sequence[TrajectoryRecord], l: float, lam: float) -> TailCurve:
    """Fraction of angles spending more than lambda of [0, T] outside {V <= l}."""

    if not 0.0 < lam < 1.0:
        raise DomainError(f"lambda must lie in (0, 1), got {lam}")
    values = _fan_matrix(fan)
    times = _fan_times(fan)
    if times.size < 2:
        raise InsufficientDataError("occupation needs at least two samples per trajectory")
    outside = (values[:, :-1] > l).astype(float)
    occupation = np.cumsum(outside, axis=1) / np.arange(1, times.size)
    counts = (occupation > lam).sum(axis=0)
    return _tail_curve(times[1:], counts, len(fan))


def stationary_level(
    s0: TranslationSurface,
    cfg: WalkConfig,
    q: float,
    workers: int = 1,
    burn_in: float = 0.5,
) -> float:
    """q-th percentile of V over the trailing part of cfg.n_trials walks."""

    if not 0.0 < q < 100.0:
        raise DomainError(f"percentile must lie in (0, 100), got {q}")
    walks = run_walks(s0, cfg, workers=workers)
    tails = [record.V_values[int(burn_in * record.V_values.size):] for record in walks]
    pooled = np.concatenate([tail for tail in tails if tail.size])
    if pooled.size == 0:
        raise InsufficientDataError("walks produced no samples past the burn-in")
    return float(np.percentile(pooled, q))


@dataclass(frozen=True)
class EffectiveRate:
    delta_prime: float
    raw: float
    clamped: bool


def effective_rate(
    delta: float,
    c: float,
    b: float,
    l: float,
    tau0: float,
    n_grid: int = EFFECTIVE_RATE_GRID,
) -> EffectiveRate:
    """delta + sup over [tau0, 2 tau0] of (1/tau) ln(c + (b/l) e^{(1-delta) tau}).

    Values below delta are clamped to delta. LevelTooSmallError when
    c e^{-(1-delta) tau} + b/l >= 1 somewhere, which is exactly delta' >= 1.
    """

    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    if not (c > 0.0 and b > 0.0 and l > 0.0 and tau0 > 0.0):
        raise DomainError("c, b, l and tau0 must be positive")
    if not c * math.exp(-(1.0 - delta) * tau0) < 1.0:
        raise PreconditionError(f"c e^(-(1-delta) tau0) = {c * math.exp(-(1.0 - delta) * tau0):.4g} >= 1")
    taus = np.linspace(tau0, 2.0 * tau0, n_grid)
    factors = c * np.exp(-(1.0 - delta) * taus) + b / l
    if np.any(factors >= 1.0):
        raise LevelTooSmallError(f"level l={l} too small: contraction factor reaches {factors.max():.4g}")
    raw = delta + float(np.max(np.log(c + (b / l) * np.exp((1.0 - delta) * taus)) / taus))
    clamped = raw < delta
    if clamped:
        logger.info("effective rate %.6g below delta=%.4g; clamped", raw, delta)
    return EffectiveRate(delta_prime=max(raw, delta), raw=raw, clamped=clamped)


def walk_return_bound(
    V_x: float,
    c_tilde: float,
    b_tilde: float,
    delta: float,
    tau: float,
    l: float,
    n: int,
) -> HittingBound:
    """(V(x)/l) gamma^n with gamma = c~ e^{-(1-delta) tau} + b~/l."""

    if not (l > 0.0 and tau > 0.0 and c_tilde > 0.0 and b_tilde > 0.0):
        raise DomainError("l, tau, c_tilde and b_tilde must be positive")
    if not V_x > l:
        raise PreconditionError(f"start must lie outside the level set (V={V_x} <= l={l})")
    factor = c_tilde * math.exp(-(1.0 - delta) * tau) + b_tilde / l
    contractive = factor < 1.0
    if not contractive:
        logger.warning("walk return factor %.6g is not below 1", factor)
    return HittingBound(value=(V_x / l) * factor ** n, factor=factor, contractive=contractive)


@dataclass
class CrosscheckReport:
    rate: RateResult
    curve: TailCurve
    C: float
    n_checked: int
    two_term_ok: bool
    n_sequences: int
    sequences: List[SojournSequence] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.rate.gamma < 1.0 and self.C > 0.0


def occupation_rate_crosscheck(
    fan: Sequence[TrajectoryRecord],
    l: float,
    l0: float,
    C_prime: float,
    lam: float,
    min_ratio: float = 1.0,
) -> CrosscheckReport:
    """Feed sojourns extracted from a fan into deviation_rate.

    Outside sojourns become eta samples and complete cycles xi samples. C is the
    smallest constant with curve(T) <= C gamma^T over sampled T >= T_min.
    """

    sequences = []
    for record in fan:
        if record.times.size < 2:
            continue
        sequences.append(extract_sojourns(record.times, record.V_values, l, l0, C_prime, min_ratio))
    outside = np.concatenate([seq.outside() for seq in sequences]) if sequences else np.empty(0)
    cycles = np.concatenate([seq.cycles() for seq in sequences]) if sequences else np.empty(0)
    if cycles.size == 0 or cycles.mean() <= 0.0:
        raise InsufficientDataError("no complete inside/outside cycle in the fan")
    rate = deviation_rate(EmpiricalTail(outside), EmpiricalTail(cycles), lam)

    curve = occupation_tail(fan, l, lam)
    late = curve.times >= rate.T_min
    ratios = curve.fractions[late] / rate.gamma ** curve.times[late]
    C = float(ratios.max()) if ratios.size and ratios.max() > 0.0 else float(np.finfo(float).tiny)
    two_term = np.array([rate.bound(float(T)) for T in curve.times[late]])
    if not late.any():
        logger.info("no sampled T reaches T_min=%.4g; C is not constrained", rate.T_min)
    return CrosscheckReport(
        rate=rate,
        curve=curve,
        C=C,
        n_checked=int(late.sum()),
        two_term_ok=bool(np.all(curve.fractions[late] <= two_term)),
        n_sequences=len(sequences),
        sequences=sequences,
    )
