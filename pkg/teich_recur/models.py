from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from teich_recur.config import DEFAULT_DT
from teich_recur.exceptions import DomainError


class ExperimentKind(str, Enum):
    FIRST_HIT = "first-hit"
    WINDOW_MISS = "window-miss"
    OCCUPATION = "occupation"
    WALK_RETURN = "walk-return"
    DRIFT_VERIFY = "drift-verify"
    CHERNOFF = "chernoff"
    HYPERBOLIC_CHECK = "hyperbolic-check"
    ENUMERATE = "enumerate"
    FAN = "fan"


class TailKind(str, Enum):
    EMPIRICAL = "empirical"
    EXPONENTIAL_TAIL = "exponential-tail"
    DETERMINISTIC = "deterministic"


@dataclass(frozen=True)
class DriftCondition:
    """One-step drift inequality E(V(X_1) | X_0 = x) <= c V(x) + b."""

    c: float
    b: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.c) and 0.0 < self.c < 1.0):
            raise DomainError(f"drift coefficient c must lie in (0, 1), got {self.c}")
        if not (math.isfinite(self.b) and self.b > 0.0):
            raise DomainError(f"drift constant b must be positive, got {self.b}")

    @property
    def b_prime(self) -> float:
        return self.b / (1.0 - self.c)

    @property
    def critical_level(self) -> float:
        """Levels above this make c + b/l contractive."""
        return self.b_prime


@dataclass(frozen=True)
class LevelSet:
    l: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.l) and self.l > 0.0):
            raise DomainError(f"level must be positive, got {self.l}")

    def contains(self, value: float) -> bool:
        return value <= self.l

    def is_contractive(self, dc: DriftCondition) -> bool:
        return dc.c + dc.b / self.l < 1.0


@dataclass(frozen=True)
class DriftWeights:
    c_tilde_prime: float
    w: float
    lambdas: Tuple[float, ...]
    partial_sums_ok: bool
    failing_index: Optional[int] = None

    @property
    def c_tilde(self) -> float:
        return 2.0 * self.c_tilde_prime


@dataclass(frozen=True)
class SaddleConnection:
    holonomy: Tuple[float, float]
    start: int
    end: int

    def __post_init__(self) -> None:
        if math.hypot(*self.holonomy) <= 0.0:
            raise DomainError("saddle connection holonomy must be non-zero")

    @property
    def length(self) -> float:
        return math.hypot(*self.holonomy)

    @property
    def angle(self) -> float:
        """Direction in [0, 2pi)."""
        return math.atan2(self.holonomy[1], self.holonomy[0]) % (2.0 * math.pi)


@dataclass(frozen=True)
class WalkConfig:
    tau: float
    delta: float
    l: float
    l0: float
    n_steps: int
    n_trials: int = 1
    seed: int = 0
    dt: float = DEFAULT_DT

    def __post_init__(self) -> None:
        if self.tau <= 0.0 or self.dt <= 0.0:
            raise DomainError("tau and dt must be positive")
        if not 0.0 < self.delta < 1.0:
            raise DomainError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.l > self.l0 > 0.0:
            raise DomainError(f"levels must satisfy l > l0 > 0, got l={self.l}, l0={self.l0}")
        if self.n_trials < 1:
            raise DomainError("n_trials must be at least 1")
        if self.n_steps < 0:
            raise DomainError("n_steps must be non-negative")

    def as_dict(self) -> Dict[str, float]:
        return {
            "tau": self.tau,
            "delta": self.delta,
            "l": self.l,
            "l0": self.l0,
            "n_steps": self.n_steps,
            "n_trials": self.n_trials,
            "seed": self.seed,
            "dt": self.dt,
        }


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    V_values: np.ndarray
    theta: np.ndarray
    truncated: bool = False

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.V_values = np.asarray(self.V_values, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        if self.times.shape != self.V_values.shape:
            raise DomainError("times and V_values must have the same length")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0.0):
            raise DomainError("trajectory times must be strictly increasing")


def _merge_short_sojourns(taus: np.ndarray, c_prime: float) -> np.ndarray:
    merged = taus.copy()
    for out_idx in range(1, merged.size, 2):
        if merged[out_idx] <= c_prime:
            merged[out_idx - 1] += merged[out_idx]
            merged[out_idx] = 0.0
    return merged


@dataclass
class SojournSequence:
    """Alternating inside/outside durations.

    Index 0 is the first inside sojourn (possibly zero when the trace starts
    outside), index 1 the first outside sojourn, and so on. ``merged`` folds
    every outside sojourn of length <= C_prime into the inside sojourn that
    precedes it.
    """

    taus: np.ndarray
    C_prime: float = 0.0
    merged: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.taus = np.asarray(self.taus, dtype=float)
        if self.taus.ndim != 1:
            raise DomainError("taus must be one-dimensional")
        if not np.all(np.isfinite(self.taus)) or np.any(self.taus < 0.0):
            raise DomainError("sojourn durations must be finite and non-negative")
        if self.C_prime < 0.0:
            raise DomainError("C_prime must be non-negative")
        self.merged = _merge_short_sojourns(self.taus, self.C_prime)

    @property
    def total(self) -> float:
        return float(self.taus.sum())

    def inside(self, merged: bool = True) -> np.ndarray:
        seq = self.merged if merged else self.taus
        return seq[0::2]

    def outside(self, merged: bool = True) -> np.ndarray:
        seq = self.merged if merged else self.taus
        return seq[1::2]

    def cycles(self, merged: bool = True) -> np.ndarray:
        """Durations of complete (inside, outside) pairs."""
        seq = self.merged if merged else self.taus
        n_pairs = seq.size // 2
        return seq[0:2 * n_pairs:2] + seq[1:2 * n_pairs:2]


@dataclass(frozen=True)
class RateResult:
    theta_star: float
    gamma_outside: float
    theta_cycle: float
    gamma_cycle: float
    c: float
    lambda_prime: float
    gamma: float
    T_min: float
    theta0: float

    def bound(self, T: float) -> float:
        """Two-term bound gamma'^floor(cT/2) + gamma''^(cT)."""
        return self.gamma_outside ** math.floor(self.c * T / 2.0) + self.gamma_cycle ** (self.c * T)

    def as_report(self) -> Dict[str, float]:
        return {
            "theta1": self.theta_star,
            "gamma1": self.gamma_outside,
            "theta2": self.theta_cycle,
            "gamma2": self.gamma_cycle,
            "c": self.c,
            "lambda_prime": self.lambda_prime,
            "gamma": self.gamma,
            "T_min": self.T_min,
        }


@dataclass
class TailCurve:
    times: np.ndarray
    fractions: np.ndarray
    counts: np.ndarray
    n_total: int
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    bound_overlay: Optional[np.ndarray] = None
    rate: Optional[float] = None
    intercept: Optional[float] = None
    r_squared: Optional[float] = None

    def is_non_increasing(self, slack: float = 0.0) -> bool:
        return bool(np.all(np.diff(self.fractions) <= slack))

    def rows(self) -> List[Tuple[float, float, float, float, Optional[float]]]:
        overlay = self.bound_overlay
        return [
            (
                float(self.times[k]),
                float(self.fractions[k]),
                float(self.ci_lo[k]),
                float(self.ci_hi[k]),
                None if overlay is None else float(overlay[k]),
            )
            for k in range(self.times.size)
        ]


@dataclass
class ExperimentSpec:
    kind: ExperimentKind
    surface: Optional[str] = None
    parameters: Dict[str, object] = field(default_factory=dict)
