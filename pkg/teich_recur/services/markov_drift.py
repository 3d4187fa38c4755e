from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from teich_recur.config import DEFAULT_BATCH_SIZE
from teich_recur.exceptions import DomainError, NoDriftDetectedError, PreconditionError
from teich_recur.models import DriftCondition, LevelSet
from teich_recur.services.parallel import chunk_sizes, map_work_items, seed_stream
from teich_recur.services.stats import DEFAULT_CONFIDENCE, wilson_interval

logger = logging.getLogger(__name__)

C_FLOOR = 1e-6
B_FLOOR = 1e-12

Sampler = Callable[[Any, np.random.Generator], Any]
BatchSampler = Callable[[np.ndarray, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class ChainModel:
    """Markov chain given by a one-step sampler and a Lyapunov function.

    The optional batch callables advance a stacked array of states at once;
    when present they are used for ensembles.
    """

    sampler: Sampler
    lyapunov: Callable[[Any], float]
    batch_sampler: Optional[BatchSampler] = None
    batch_lyapunov: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @property
    def vectorized(self) -> bool:
        return self.batch_sampler is not None and self.batch_lyapunov is not None


@dataclass(frozen=True)
class HittingBound:
    value: float
    factor: float
    contractive: bool


def hitting_tail_bound(V_x: float, dc: DriftCondition, l: float, n: int) -> HittingBound:
    """(V(x)/l)(c + b/l)^n, a bound on P_x(tau_C > n) for C = {V <= l}."""

    level = LevelSet(l)
    if n < 0:
        raise DomainError(f"n must be non-negative, got {n}")
    if level.contains(V_x):
        raise PreconditionError(f"start must lie outside the level set (V={V_x} <= l={l})")
    factor = dc.c + dc.b / l
    contractive = level.is_contractive(dc)
    if not contractive:
        logger.warning("c + b/l = %.6g is not below 1; the bound does not decay", factor)
    return HittingBound(value=(V_x / l) * factor ** n, factor=factor, contractive=contractive)


def iterated_drift_bound(V_x: float, dc: DriftCondition, m: int) -> float:
    if m < 0:
        raise DomainError(f"m must be non-negative, got {m}")
    return dc.c ** m * V_x + dc.b_prime


def tightness_level(sup_V_on_C: float, dc: DriftCondition, eps: float) -> float:
    if not 0.0 < eps <= 1.0:
        raise DomainError(f"eps must lie in (0, 1], got {eps}")
    return (sup_V_on_C + dc.b_prime) / eps


def uniform_level(dc: DriftCondition, eps: float) -> float:
    if not 0.0 < eps <= 1.0:
        raise DomainError(f"eps must lie in (0, 1], got {eps}")
    return 2.0 * dc.b_prime / eps


def burn_in_steps(V_x: float, dc: DriftCondition) -> int:
    """Smallest m with c^m V(x) <= b'."""
    if not math.isfinite(V_x):
        raise DomainError(f"V(x) must be finite, got {V_x}")
    m = 0
    value = V_x
    while value > dc.b_prime:
        value *= dc.c
        m += 1
    return m


def occupation_lower_bound(E_Sn: float, lam: float) -> float:
    if not 0.0 < lam < 1.0:
        raise DomainError(f"lambda must lie in (0, 1), got {lam}")
    if not 0.0 <= E_Sn <= 1.0:
        raise DomainError(f"E(S_n) must lie in [0, 1], got {E_Sn}")
    return max(0.0, (E_Sn - lam) / (1.0 - lam))


def _sample_next_values(
    chain: ChainModel,
    start: Any,
    n_samples: int,
    rng: np.random.Generator,
) -> np.ndarray:
    if chain.vectorized:
        states = np.repeat(np.asarray(start)[None, ...], n_samples, axis=0)
        return np.asarray(chain.batch_lyapunov(chain.batch_sampler(states, rng)), dtype=float)
    return np.array([chain.lyapunov(chain.sampler(start, rng)) for _ in range(n_samples)])


def estimate_drift(
    chain: ChainModel,
    starts: Sequence[Any],
    n_samples: int,
    seed: int,
    margin_sd: float = 3.0,
    workers: int = 1,
) -> DriftCondition:
    """Fit an envelope E(V(X_1) | x) <= c V(x) + b from Monte-Carlo samples.

    c comes from a least-squares line through (V(x), mean + margin_sd * SE)
    pairs; b is then raised until every point lies on or below the line.
    With a degenerate design (one distinct V value) c falls back to a floor.
    """

    if n_samples < 100:
        raise DomainError(f"n_samples must be at least 100, got {n_samples}")
    if not starts:
        raise DomainError("at least one start state is required")

    def one(k: int) -> np.ndarray:
        values = _sample_next_values(chain, starts[k], n_samples, seed_stream(seed, k))
        return np.array([values.mean(), values.std(ddof=1) / math.sqrt(n_samples)])

    moments = np.array(map_work_items(one, range(len(starts)), workers))
    v_now = np.array([float(chain.lyapunov(x)) for x in starts])
    upper = moments[:, 0] + margin_sd * moments[:, 1]

    if np.ptp(v_now) == 0.0:
        c = C_FLOOR
    else:
        design = np.column_stack([v_now, np.ones_like(v_now)])
        (slope, _), *_ = np.linalg.lstsq(design, upper, rcond=None)
        if slope >= 1.0:
            raise NoDriftDetectedError(f"fitted drift coefficient {slope:.4g} is not below 1")
        c = max(float(slope), C_FLOOR)
    b = max(float(np.max(upper - c * v_now)), B_FLOOR)
    logger.info("estimated drift envelope c=%.4g b=%.4g from %d starts", c, b, len(starts))
    return DriftCondition(c=c, b=b)


@dataclass
class SurvivalCounts:
    """Trials and survivors per step; ``+`` merges independent batches."""

    trials: int
    survivors: np.ndarray

    def __add__(self, other: "SurvivalCounts") -> "SurvivalCounts":
        return SurvivalCounts(self.trials + other.trials, self.survivors + other.survivors)

    @property
    def p_hat(self) -> np.ndarray:
        return self.survivors / float(self.trials)


@dataclass
class HittingReport:
    l: float
    V_start: float
    drift: DriftCondition
    counts: SurvivalCounts
    bounds: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    passed: bool = field(init=False)

    def __post_init__(self) -> None:
        self.passed = bool(np.all(self.ci_lo <= self.bounds))

    def rows(self) -> List[Dict[str, float]]:
        p_hat = self.counts.p_hat
        return [
            {
                "n": n,
                "p_hat": float(p_hat[n]),
                "ci_lo": float(self.ci_lo[n]),
                "ci_hi": float(self.ci_hi[n]),
                "bound": float(self.bounds[n]),
                "pass": bool(self.ci_lo[n] <= self.bounds[n]),
            }
            for n in range(p_hat.size)
        ]


def _survival_batch(
    chain: ChainModel,
    start: Any,
    l: float,
    n_max: int,
    size: int,
    rng: np.random.Generator,
) -> SurvivalCounts:
    survivors = np.zeros(n_max + 1, dtype=np.int64)
    survivors[0] = size
    if chain.vectorized:
        states = np.repeat(np.asarray(start)[None, ...], size, axis=0)
        alive = np.ones(size, dtype=bool)
        for n in range(1, n_max + 1):
            if not alive.any():
                break
            states[alive] = chain.batch_sampler(states[alive], rng)
            alive[alive] = np.asarray(chain.batch_lyapunov(states[alive])) > l
            survivors[n] = int(alive.sum())
        return SurvivalCounts(size, survivors)
    for _ in range(size):
        state = start
        for n in range(1, n_max + 1):
            state = chain.sampler(state, rng)
            if chain.lyapunov(state) <= l:
                break
            survivors[n] += 1
    return SurvivalCounts(size, survivors)


def verify_hitting_bound(
    chain: ChainModel,
    dc: DriftCondition,
    l: float,
    start: Any,
    n_max: int,
    trials: int,
    seed: int,
    confidence: float = DEFAULT_CONFIDENCE,
    batch_size: int = DEFAULT_BATCH_SIZE,
    workers: int = 1,
) -> HittingReport:
    """Empirical survival curve against (V/l)(c + b/l)^n.

    A step fails only when the lower Wilson bound exceeds the analytic bound.
    """

    v_start = float(chain.lyapunov(start))
    if LevelSet(l).contains(v_start):
        raise PreconditionError(f"start lies inside the level set (V={v_start} <= l={l})")
    sizes = chunk_sizes(trials, batch_size)

    def run(k: int) -> SurvivalCounts:
        return _survival_batch(chain, start, l, n_max, sizes[k], seed_stream(seed, k))

    parts = map_work_items(run, range(len(sizes)), workers)
    counts = parts[0]
    for part in parts[1:]:
        counts = counts + part
    bounds = np.array([hitting_tail_bound(v_start, dc, l, n).value for n in range(n_max + 1)])
    ci_lo, ci_hi = wilson_interval(counts.survivors, counts.trials, confidence)
    report = HittingReport(l, v_start, dc, counts, bounds, ci_lo, ci_hi)
    if not report.passed:
        logger.warning("empirical survival exceeds the hitting bound at level %s", l)
    return report


class FiniteChain:
    """Finite-state chain with exact oracles for the drift bounds."""

    def __init__(self, P: Sequence[Sequence[float]], V: Sequence[float]) -> None:
        self.P = np.array(P, dtype=float)
        self.V = np.array(V, dtype=float)
        k = self.V.size
        if self.P.shape != (k, k):
            raise DomainError(f"transition matrix must be {k}x{k}")
        if np.any(self.P < 0.0) or np.abs(self.P.sum(axis=1) - 1.0).max() > 1e-12:
            raise DomainError("rows of the transition matrix must be probability vectors")
        if np.any(self.V < 0.0):
            raise DomainError("Lyapunov values must be non-negative")
        self._cumulative = np.cumsum(self.P, axis=1)

    @property
    def n_states(self) -> int:
        return int(self.V.size)

    def expected_next_V(self) -> np.ndarray:
        return self.P @ self.V

    def iterated_expectation(self, m: int) -> np.ndarray:
        """(P^m V) for every state."""
        return np.linalg.matrix_power(self.P, m) @ self.V

    def exact_survival(self, start: int, l: float, n_max: int) -> np.ndarray:
        """P_x(tau_C > n) for n = 0..n_max via sub-stochastic matrix powers."""
        outside = self.V > l
        if not outside[start]:
            raise PreconditionError(f"state {start} lies inside the level set")
        index = np.flatnonzero(outside)
        Q = self.P[np.ix_(index, index)]
        pos = int(np.searchsorted(index, start))
        vec = np.ones(index.size)
        out = np.empty(n_max + 1)
        for n in range(n_max + 1):
            out[n] = vec[pos]
            vec = Q @ vec
        return out

    def tail_probability(self, start: int, level: float, m: int) -> float:
        """P^m(x, {V > level})."""
        row = np.linalg.matrix_power(self.P, m)[start]
        return float(row[self.V > level].sum())

    def occupation_distribution(self, start: int, l: float, n: int) -> np.ndarray:
        """Law of the number of visits to {V <= l} among X_1..X_n."""
        inside = (self.V <= l).astype(int)
        dist = np.zeros((self.n_states, n + 1))
        dist[start, 0] = 1.0
        for _ in range(n):
            moved = np.einsum("sc,st->tc", dist, self.P)
            nxt = np.zeros_like(moved)
            nxt[inside == 0] = moved[inside == 0]
            nxt[inside == 1, 1:] = moved[inside == 1, :-1]
            dist = nxt
        return dist.sum(axis=0)

    def _step_batch(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(states.shape[0])
        nxt = (u[:, None] >= self._cumulative[states]).sum(axis=1)
        return np.minimum(nxt, self.n_states - 1)

    def simulate(self, start: int, n_steps: int, trials: int, rng: np.random.Generator) -> np.ndarray:
        """Paths of shape (trials, n_steps + 1)."""
        paths = np.empty((trials, n_steps + 1), dtype=np.int64)
        paths[:, 0] = start
        for n in range(1, n_steps + 1):
            paths[:, n] = self._step_batch(paths[:, n - 1], rng)
        return paths

    def as_chain_model(self) -> ChainModel:
        def sampler(state: int, rng: np.random.Generator) -> int:
            return int(self._step_batch(np.array([int(state)]), rng)[0])

        return ChainModel(
            sampler=sampler,
            lyapunov=lambda state: float(self.V[int(state)]),
            batch_sampler=self._step_batch,
            batch_lyapunov=lambda states: self.V[np.asarray(states, dtype=np.int64)],
        )


FIXTURE_DRIFT = DriftCondition(c=0.5, b=1.0)


def fixture_chain() -> FiniteChain:
    """Eight states with V(i) = 2^i and (PV)(i) <= V(i)/2 + 1.

    Mostly steps down, occasionally up, and resets to 0 with probability 0.02.
    """

    P = [
        [0.60, 0.40, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00],
        [0.99, 0.00, 0.01, 0.00, 0.00, 0.00, 0.00, 0.00],
        [0.02, 0.97, 0.00, 0.01, 0.00, 0.00, 0.00, 0.00],
        [0.02, 0.00, 0.97, 0.00, 0.01, 0.00, 0.00, 0.00],
        [0.02, 0.00, 0.00, 0.97, 0.00, 0.01, 0.00, 0.00],
        [0.02, 0.00, 0.00, 0.00, 0.97, 0.00, 0.01, 0.00],
        [0.02, 0.00, 0.00, 0.00, 0.00, 0.97, 0.00, 0.01],
        [0.02, 0.00, 0.00, 0.00, 0.00, 0.00, 0.98, 0.00],
    ]
    return FiniteChain(P, [2.0 ** i for i in range(8)])
