from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from teich_recur.config import get_settings
from teich_recur.exceptions import DomainError
from teich_recur.services.flat_surface import (
    TranslationSurface,
    enumerate_saddle_connections,
    reduce_lattice_bases,
    v0_from_length,
)

logger = logging.getLogger(__name__)


def geodesic_matrices(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    g = np.zeros(t.shape + (2, 2))
    g[..., 0, 0] = np.exp(t)
    g[..., 1, 1] = np.exp(-t)
    return g


def rotation_matrices(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    r = np.empty(theta.shape + (2, 2))
    r[..., 0, 0] = np.cos(theta)
    r[..., 0, 1] = -np.sin(theta)
    r[..., 1, 0] = np.sin(theta)
    r[..., 1, 1] = np.cos(theta)
    return r


def _operator_norm(m: np.ndarray) -> np.ndarray:
    fro2 = (m * m).sum(axis=(-2, -1))
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    disc = np.sqrt(np.maximum(fro2 * fro2 - 4.0 * det * det, 0.0))
    return np.sqrt((fro2 + disc) / 2.0)


class ShortestSaddleOracle(ABC):
    """Tracks l(M s) for stacks of matrices M without rebuilding surfaces.

    States are opaque (..., 2, 2) arrays; ``advance`` applies A on the left,
    so advancing by g then by h gives the state of h g s.
    """

    surface: TranslationSurface

    def __init__(self, surface: TranslationSurface) -> None:
        self.surface = surface

    @abstractmethod
    def initial_state(self, count: Optional[int] = None) -> np.ndarray:
        """State of the untransformed surface, optionally stacked."""

    @abstractmethod
    def advance(self, states: np.ndarray, matrices: np.ndarray) -> np.ndarray:
        """States of A s for every stacked A."""

    @abstractmethod
    def shortest(self, states: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Shortest lengths and a mask of which values are certified."""

    def v0(self, states: np.ndarray, delta: float) -> Tuple[np.ndarray, np.ndarray]:
        lengths, certified = self.shortest(states)
        return v0_from_length(lengths, delta), certified


class LatticeOracle(ShortestSaddleOracle):
    """Square-tiled surfaces: l equals the shortest vector of the period lattice."""

    def __init__(self, surface: TranslationSurface) -> None:
        if surface.period_basis is None:
            raise DomainError("LatticeOracle needs a surface with a period basis")
        super().__init__(surface)
        self._basis = reduce_lattice_bases(surface.period_basis)

    def initial_state(self, count: Optional[int] = None) -> np.ndarray:
        if count is None:
            return self._basis.copy()
        return np.broadcast_to(self._basis, (count, 2, 2)).copy()

    def advance(self, states: np.ndarray, matrices: np.ndarray) -> np.ndarray:
        return reduce_lattice_bases(np.asarray(matrices) @ states)

    def shortest(self, states: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        lengths = np.linalg.norm(states[..., :, 0], axis=-1)
        return lengths, np.ones(lengths.shape, dtype=bool)


class CandidateOracle(ShortestSaddleOracle):
    """General surfaces: minimize over saddle connections precomputed up to R0.

    A value is certified when it is at most R0 / |M|, since every connection
    longer than R0 has image longer than R0 / |M| under M.
    """

    def __init__(self, surface: TranslationSurface, radius: Optional[float] = None) -> None:
        super().__init__(surface)
        if radius is None:
            radius = get_settings().candidate_radius * max(1.0, math.sqrt(surface.area))
        self.radius = float(radius)
        connections = enumerate_saddle_connections(surface, self.radius)
        holonomies = np.array([sc.holonomy for sc in connections]).reshape(-1, 2)
        self._holonomies = np.unique(np.round(holonomies, 12), axis=0)
        logger.debug(
            "candidate oracle for %r holds %d holonomies up to %.3f",
            surface,
            self._holonomies.shape[0],
            self.radius,
        )

    def initial_state(self, count: Optional[int] = None) -> np.ndarray:
        if count is None:
            return np.eye(2)
        return np.broadcast_to(np.eye(2), (count, 2, 2)).copy()

    def advance(self, states: np.ndarray, matrices: np.ndarray) -> np.ndarray:
        return np.asarray(matrices) @ states

    def shortest(self, states: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        images = states @ self._holonomies.T
        lengths = np.linalg.norm(images, axis=-2).min(axis=-1)
        certified = lengths <= self.radius / _operator_norm(states)
        return lengths, certified


def oracle_for_surface(
    surface: TranslationSurface,
    radius: Optional[float] = None,
) -> ShortestSaddleOracle:
    """Return the cheapest exact oracle for the surface."""

    mapping = {
        True: lambda: LatticeOracle(surface),
        False: lambda: CandidateOracle(surface, radius),
    }
    return mapping[surface.period_basis is not None]()


@dataclass(frozen=True)
class LogsmoothReport:
    kappa_found: float
    holds: bool
    sigma: float
    n_samples: int


def logsmooth_check(
    surface: TranslationSurface,
    delta: float,
    sigma: float,
    n_samples: int = 2000,
    seed: int = 0,
    h_radius: float = 2.0,
    kappa_max: float = 8.0,
    kappa_probe: float = 0.01,
) -> LogsmoothReport:
    """Search for the largest displacement keeping V within a factor sigma.

    Samples h = r_a g_u r_b with u <= h_radius and p = g_x r_y at hyperbolic
    distance below kappa from the identity, then bisects on kappa with the
    samples held fixed. Pure rotations (kappa = 0) give equality.
    """

    if not sigma > 1.0:
        raise DomainError(f"sigma must exceed 1, got {sigma}")
    rng = np.random.default_rng([seed, 0])
    oracle = oracle_for_surface(surface)

    h = (
        rotation_matrices(rng.uniform(0.0, 2.0 * math.pi, n_samples))
        @ geodesic_matrices(rng.uniform(0.0, h_radius, n_samples))
        @ rotation_matrices(rng.uniform(0.0, 2.0 * math.pi, n_samples))
    )
    p_scale = rng.uniform(0.0, 1.0, n_samples)
    p_rotation = rotation_matrices(rng.uniform(0.0, 2.0 * math.pi, n_samples))

    base = oracle.advance(oracle.initial_state(n_samples), h)
    v_h, ok_h = oracle.v0(base, delta)

    def holds(kappa: float) -> bool:
        # d(i, i.g_x) = 2x, so x < kappa / 2
        p = geodesic_matrices(p_scale * kappa / 2.0) @ p_rotation
        v_p, ok_p = oracle.v0(oracle.advance(base, p), delta)
        keep = ok_h & ok_p
        slack = 1.0 + 1e-12
        return bool(
            np.all(v_p[keep] <= sigma * v_h[keep] * slack)
            and np.all(v_h[keep] <= sigma * v_p[keep] * slack)
        )

    if holds(kappa_max):
        kappa_found = kappa_max
    else:
        lo, hi = 0.0, kappa_max
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            if holds(mid):
                lo = mid
            else:
                hi = mid
        kappa_found = lo
    return LogsmoothReport(
        kappa_found=kappa_found,
        holds=holds(kappa_probe),
        sigma=sigma,
        n_samples=n_samples,
    )
