from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence, Union

import numpy as np

from teich_recur.config import DEFAULT_THETA_CAP
from teich_recur.exceptions import ConfigError, DomainError
from teich_recur.models import TailKind

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

STABLE_REL_SE = 0.05
THETA_PROBES = 256


class TailModel(ABC):
    """Law of a non-negative random variable, seen through its MGF."""

    kind: TailKind

    def __init__(self, kind: TailKind) -> None:
        self.kind = kind

    @property
    @abstractmethod
    def mean(self) -> float:
        """E(X)."""

    @property
    @abstractmethod
    def theta_limit(self) -> float:
        """Supremum of the theta where the MGF is finite (or reliably estimated)."""

    @abstractmethod
    def _mgf(self, theta: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        ...

    def mgf(self, theta: ArrayLike) -> ArrayLike:
        """E(exp(theta X)); accepts scalars or arrays."""
        arr = np.asarray(theta, dtype=float)
        out = self._mgf(np.atleast_1d(arr))
        return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


class DeterministicTail(TailModel):
    def __init__(self, value: float) -> None:
        super().__init__(TailKind.DETERMINISTIC)
        if not (math.isfinite(value) and value >= 0.0):
            raise DomainError(f"deterministic value must be finite and non-negative, got {value}")
        self.value = float(value)

    @property
    def mean(self) -> float:
        return self.value

    @property
    def theta_limit(self) -> float:
        return math.inf

    def _mgf(self, theta: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(theta * self.value)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.full(size, self.value)

    def __repr__(self) -> str:
        return f"DeterministicTail({self.value!r})"


class ExponentialTail(TailModel):
    """Atom at 0 plus an exponential tail past a cutoff.

    P(X > t) = a1 exp(-a2 t) for t >= cutoff and X = 0 otherwise, so the atom
    carries mass 1 - a1 exp(-a2 cutoff). With a1 = 1 and cutoff = 0 this is the
    plain exponential law with rate a2.
    """

    def __init__(self, a1: float, a2: float, cutoff: float = 0.0) -> None:
        super().__init__(TailKind.EXPONENTIAL_TAIL)
        if not (a1 > 0.0 and a2 > 0.0):
            raise DomainError(f"a1 and a2 must be positive, got a1={a1}, a2={a2}")
        if cutoff < 0.0:
            raise DomainError(f"cutoff must be non-negative, got {cutoff}")
        self.a1 = float(a1)
        self.a2 = float(a2)
        self.cutoff = float(cutoff)
        self.tail_mass = self.a1 * math.exp(-self.a2 * self.cutoff)
        if self.tail_mass > 1.0:
            raise DomainError(
                f"a1 exp(-a2 cutoff) = {self.tail_mass:.4g} exceeds 1; raise the cutoff"
            )

    @classmethod
    def with_mean(cls, mu: float) -> "ExponentialTail":
        if not mu > 0.0:
            raise DomainError(f"exponential mean must be positive, got {mu}")
        return cls(1.0, 1.0 / mu, 0.0)

    @property
    def mean(self) -> float:
        return self.tail_mass * (self.cutoff + 1.0 / self.a2)

    @property
    def theta_limit(self) -> float:
        return self.a2

    def _mgf(self, theta: np.ndarray) -> np.ndarray:
        p = self.tail_mass
        out = np.full(theta.shape, np.inf)
        ok = theta < self.a2
        th = theta[ok]
        out[ok] = (1.0 - p) + p * np.exp(th * self.cutoff) * self.a2 / (self.a2 - th)
        return out

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        hit = rng.random(size) < self.tail_mass
        tail = self.cutoff + rng.exponential(1.0 / self.a2, size)
        return np.where(hit, tail, 0.0)

    def __repr__(self) -> str:
        return f"ExponentialTail(a1={self.a1!r}, a2={self.a2!r}, cutoff={self.cutoff!r})"


class EmpiricalTail(TailModel):
    """Plug-in law of observed samples.

    The MGF is the sample mean of exp(theta x). theta_limit is the largest probe
    theta up to theta_cap at which the relative standard error of that mean
    stays under 5%; past it the estimate is dominated by the largest samples.
    """

    def __init__(self, samples: Sequence[float], theta_cap: float = DEFAULT_THETA_CAP) -> None:
        super().__init__(TailKind.EMPIRICAL)
        data = np.asarray(samples, dtype=float).ravel()
        if data.size == 0:
            raise DomainError("empirical tail needs at least one sample")
        if not np.all(np.isfinite(data)) or np.any(data < 0.0):
            raise DomainError("empirical samples must be finite and non-negative")
        self.samples = data
        self.theta_cap = float(theta_cap)
        self._top = float(data.max())
        self._theta_limit: Optional[float] = None

    @property
    def mean(self) -> float:
        return float(self.samples.mean())

    def _relative_se(self, theta: float) -> float:
        if self.samples.size < 2:
            return 0.0 if self._top == 0.0 else math.inf
        w = np.exp(theta * (self.samples - self._top))
        return float(w.std(ddof=1) / (math.sqrt(w.size) * w.mean()))

    @property
    def theta_limit(self) -> float:
        if self._theta_limit is None:
            limit = self.theta_cap
            for theta in np.linspace(0.0, self.theta_cap, THETA_PROBES + 1)[1:]:
                if self._relative_se(float(theta)) >= STABLE_REL_SE:
                    limit = float(theta) - self.theta_cap / THETA_PROBES
                    break
            self._theta_limit = max(limit, 0.0)
            logger.debug("empirical MGF stable up to theta=%.4g", self._theta_limit)
        return self._theta_limit

    def _mgf(self, theta: np.ndarray) -> np.ndarray:
        out = np.empty(theta.shape)
        for k, th in enumerate(theta):
            # factor out exp(th * shift) to keep the mean finite
            shift = self._top if th > 0.0 else float(self.samples.min())
            w = np.exp(th * (self.samples - shift)).mean()
            out[k] = w * math.exp(th * shift) if th * shift < 700.0 else np.inf
        return out

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.choice(self.samples, size=size, replace=True)

    def __repr__(self) -> str:
        return f"EmpiricalTail(n={self.samples.size})"


def _load_samples(path: str, key: Optional[str] = None) -> np.ndarray:
    try:
        return np.loadtxt(Path(path), comments="#", delimiter=None, ndmin=1).ravel()
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read samples from {path}: {exc}", key=key)


def get_tail_model(kind: TailKind, **params: float) -> TailModel:
    """Return the TailModel for a kind and its parameters."""

    mapping: Dict[TailKind, Callable[..., TailModel]] = {
        TailKind.DETERMINISTIC: DeterministicTail,
        TailKind.EXPONENTIAL_TAIL: ExponentialTail,
        TailKind.EMPIRICAL: EmpiricalTail,
    }
    try:
        factory = mapping[TailKind(kind)]
    except (KeyError, ValueError):
        raise ValueError(f"Unknown tail kind: {kind}")
    return factory(**params)


def parse_tail_spec(text: str, key: Optional[str] = None) -> TailModel:
    """Parse ``exp:MEAN``, ``det:C``, ``exptail:A1,A2,CUTOFF`` or ``emp:PATH``."""

    prefix, sep, body = text.partition(":")
    if not sep or not body:
        raise ConfigError(f"tail model {text!r} must look like kind:parameters", key=key)
    prefix = prefix.strip().lower()
    try:
        if prefix == "exp":
            return ExponentialTail.with_mean(float(body))
        if prefix == "det":
            return get_tail_model(TailKind.DETERMINISTIC, value=float(body))
        if prefix == "exptail":
            a1, a2, cutoff = (float(part) for part in body.split(","))
            return get_tail_model(TailKind.EXPONENTIAL_TAIL, a1=a1, a2=a2, cutoff=cutoff)
        if prefix == "emp":
            return get_tail_model(TailKind.EMPIRICAL, samples=_load_samples(body, key))
    except ConfigError:
        raise
    except DomainError as exc:
        raise ConfigError(f"invalid tail model {text!r}: {exc}", key=key)
    except ValueError:
        raise ConfigError(f"malformed parameters in tail model {text!r}", key=key)
    raise ConfigError(f"unknown tail model kind {prefix!r} in {text!r}", key=key)
