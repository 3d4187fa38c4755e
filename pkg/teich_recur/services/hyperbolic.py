from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import minimize_scalar

from teich_recur.config import DEFAULT_GRID
from teich_recur.exceptions import (
    DomainError,
    InvalidIsometryError,
    PreconditionError,
    SingularConfigurationError,
    SingularDerivativeError,
)

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

DET_TOL = 1e-6
SINGULAR_RADIUS = 1e-12
SINGULAR_COS = 1e-12
DEFAULT_SHADOW_ETA = 0.05

Interval = Tuple[float, float]


@dataclass(frozen=True)
class HPoint:
    """Point of the upper half-plane."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise DomainError(f"non-finite point ({self.x}, {self.y})")
        if self.y <= 0.0:
            raise DomainError(f"point must lie in the upper half-plane, got y={self.y}")

    @property
    def z(self) -> complex:
        return complex(self.x, self.y)


I_POINT = HPoint(0.0, 1.0)


class Isometry2:
    """Element of SL(2, R) acting on the upper half-plane from the right.

    ``apply(g @ h, p) == apply(h, apply(g, p))`` so that products read in the
    same order as ``i.g_t r_theta``.
    """

    __slots__ = ("a", "b", "c", "d")

    def __init__(self, a: float, b: float, c: float, d: float) -> None:
        entries = (a, b, c, d)
        if not all(math.isfinite(v) for v in entries):
            raise DomainError(f"non-finite matrix entries {entries}")
        det = a * d - b * c
        if abs(det - 1.0) > DET_TOL:
            raise InvalidIsometryError(f"determinant {det} deviates from 1")
        self._set_normalized(a, b, c, d, det)

    def _set_normalized(self, a: float, b: float, c: float, d: float, det: float) -> None:
        scale = math.sqrt(det)
        self.a = a / scale
        self.b = b / scale
        self.c = c / scale
        self.d = d / scale

    @classmethod
    def _from_product(cls, a: float, b: float, c: float, d: float) -> "Isometry2":
        # Products of large matrices lose the determinant to cancellation;
        # the Moebius action is scale-free so renormalize without the check.
        obj = cls.__new__(cls)
        det = a * d - b * c
        if not det > 0.0:
            raise InvalidIsometryError(f"product lost orientation (det={det})")
        obj._set_normalized(a, b, c, d, det)
        return obj

    @classmethod
    def from_matrix(cls, m: Sequence[Sequence[float]]) -> "Isometry2":
        arr = np.asarray(m, dtype=float)
        if arr.shape != (2, 2):
            raise DomainError(f"expected a 2x2 matrix, got shape {arr.shape}")
        return cls(arr[0, 0], arr[0, 1], arr[1, 0], arr[1, 1])

    @classmethod
    def identity(cls) -> "Isometry2":
        return cls(1.0, 0.0, 0.0, 1.0)

    @classmethod
    def geodesic(cls, t: float) -> "Isometry2":
        """g_t = diag(e^t, e^-t); moves i a hyperbolic distance 2|t|."""
        return cls._from_product(math.exp(t), 0.0, 0.0, math.exp(-t))

    @classmethod
    def rotation(cls, theta: float) -> "Isometry2":
        """r_theta; fixes i and turns tangent directions there by 2 theta."""
        cs, sn = math.cos(theta), math.sin(theta)
        return cls._from_product(cs, -sn, sn, cs)

    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]])

    def __matmul__(self, other: "Isometry2") -> "Isometry2":
        return Isometry2._from_product(
            self.a * other.a + self.b * other.c,
            self.a * other.b + self.b * other.d,
            self.c * other.a + self.d * other.c,
            self.c * other.b + self.d * other.d,
        )

    def inverse(self) -> "Isometry2":
        return Isometry2._from_product(self.d, -self.b, -self.c, self.a)

    def __repr__(self) -> str:
        return f"Isometry2({self.a!r}, {self.b!r}, {self.c!r}, {self.d!r})"


@dataclass(frozen=True)
class PolarChange:
    """Circle of radius t2 about the point at distance t1 above i."""

    t1: float
    t2: float

    def __post_init__(self) -> None:
        for name, value in (("t1", self.t1), ("t2", self.t2)):
            if not math.isfinite(value) or value < 0.0:
                raise DomainError(f"{name} must be finite and non-negative, got {value}")


@dataclass(frozen=True)
class DerivativeBoundReport:
    holds: bool
    holds_stated: bool
    worst_ratio: float
    lower_ratio: float
    upper_ratio: float
    eta: float


def distance(p: HPoint, q: HPoint) -> float:
    chord = math.hypot(p.x - q.x, p.y - q.y)
    return 2.0 * math.asinh(chord / (2.0 * math.sqrt(p.y * q.y)))


def apply(g: Isometry2, p: HPoint) -> HPoint:
    # right action: Moebius map of the transpose
    den = complex(g.b * p.x + g.d, g.b * p.y)
    num = complex(g.a * p.x + g.c, g.a * p.y)
    w = num / den
    return HPoint(w.real, p.y / abs(den) ** 2)


def polar_point(r: float, alpha: float) -> HPoint:
    """Point at distance r from i in direction alpha (0 = straight up)."""
    return apply(Isometry2.geodesic(r / 2.0) @ Isometry2.rotation(alpha / 2.0), I_POINT)


def circle_point(t1: float, t2: float, phi: float) -> HPoint:
    """Point at angle phi on the circle of radius t2 about polar_point(t1, 0)."""
    g = (
        Isometry2.geodesic(t2 / 2.0)
        @ Isometry2.rotation(phi / 2.0)
        @ Isometry2.geodesic(t1 / 2.0)
    )
    return apply(g, I_POINT)


def _as_phi(phi: ArrayLike) -> np.ndarray:
    arr = np.asarray(phi, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("angle must be finite")
    return arr


def _out(arr: np.ndarray, like: ArrayLike) -> ArrayLike:
    if np.ndim(like) == 0:
        return float(arr)
    return arr


def _radius_terms(pc: PolarChange, phi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    # u = cosh D - 1 written without cancellation
    u = 2.0 * math.sinh((pc.t1 - pc.t2) / 2.0) ** 2 + 2.0 * math.sinh(pc.t1) * math.sinh(
        pc.t2
    ) * np.cos(phi / 2.0) ** 2
    sinh_d = np.sqrt(u) * np.sqrt(u + 2.0)
    return np.log1p(u + sinh_d), sinh_d


def polar_radius(pc: PolarChange, phi: ArrayLike) -> ArrayLike:
    d, _ = _radius_terms(pc, _as_phi(phi))
    return _out(d, phi)


def _angle_unchecked(pc: PolarChange, phi: np.ndarray) -> np.ndarray:
    # law of cosines on the triangle (i, z0, z_phi), reduced by sinh t1
    num = math.sinh(pc.t2) * np.sin(phi)
    den = math.sinh(pc.t1) * math.cosh(pc.t2) + math.cosh(pc.t1) * math.sinh(pc.t2) * np.cos(phi)
    return np.arctan2(num, den)


def polar_angle(pc: PolarChange, phi: ArrayLike) -> ArrayLike:
    """Angle at i of the circle point, in (-pi, pi].

    sin Psi comes from the law of sines and cos Psi from the law of cosines,
    so the quadrant is unambiguous even when t1 > t2.
    """

    arr = _as_phi(phi)
    d, _ = _radius_terms(pc, arr)
    if np.any(d < SINGULAR_RADIUS):
        raise SingularConfigurationError(
            f"circle point coincides with i (t1={pc.t1}, t2={pc.t2})"
        )
    return _out(_angle_unchecked(pc, arr), phi)


def polar_radius_derivative(pc: PolarChange, phi: ArrayLike) -> ArrayLike:
    arr = _as_phi(phi)
    d, sinh_d = _radius_terms(pc, arr)
    if np.any(d < SINGULAR_RADIUS):
        raise SingularConfigurationError("radius derivative undefined where D = 0")
    value = -math.sinh(pc.t1) * math.sinh(pc.t2) * np.sin(arr) / sinh_d
    return _out(value, phi)


def polar_angle_derivative(pc: PolarChange, phi: ArrayLike) -> ArrayLike:
    """Closed-form derivative of the polar angle.

    Obtained by differentiating sinh D sin Psi = sinh t2 sin phi and
    substituting D' from the radius identity.
    """

    arr = _as_phi(phi)
    d, sinh_d = _radius_terms(pc, arr)
    if np.any(d < SINGULAR_RADIUS):
        raise SingularConfigurationError("angle derivative undefined where D = 0")
    sh1, sh2 = math.sinh(pc.t1), math.sinh(pc.t2)
    cos_psi = (sh1 * math.cosh(pc.t2) + math.cosh(pc.t1) * sh2 * np.cos(arr)) / sinh_d
    if np.any(np.abs(cos_psi) < SINGULAR_COS):
        raise SingularDerivativeError("cos Psi vanishes; use a different branch")
    coth_d = np.cosh(d) / sinh_d
    num = np.cos(arr) * sinh_d + np.sin(arr) ** 2 * coth_d * sh1 * sh2
    return _out(sh2 * num / (sinh_d ** 2 * cos_psi), phi)


def _angle_derivative_stable(pc: PolarChange, phi: np.ndarray) -> np.ndarray:
    _, sinh_d = _radius_terms(pc, phi)
    sh2 = math.sinh(pc.t2)
    num = math.sinh(pc.t1) * math.cosh(pc.t2) * np.cos(phi) + math.cosh(pc.t1) * sh2
    return sh2 * num / sinh_d ** 2


def derivative_bound_report(
    pc: PolarChange,
    eta: float,
    grid: int = DEFAULT_GRID,
) -> DerivativeBoundReport:
    """Check the derivative window of the angle map over [-pi/2, pi/2].

    For large radii the derivative behaves like e^{-t1} / cos^2(phi / 2), which
    ranges over [e^{-t1}, 2 e^{-t1}] on the window. ``holds`` tests
    e^{-t1}(1 - eta) <= |Psi'| <= 2 e^{-t1}(1 + eta); ``holds_stated`` tests the
    narrower e^{-t1}(1 - eta)/2 <= |Psi'| <= e^{-t1}(1 + eta), which fails near
    the window edges. ``worst_ratio`` compares against the asymptotic profile
    and tends to 1 as the radii grow.
    """

    if not 0.0 < eta < 1.0:
        raise DomainError(f"eta must lie in (0, 1), got {eta}")
    phi = np.linspace(-math.pi / 2.0, math.pi / 2.0, grid)
    scaled = np.abs(_angle_derivative_stable(pc, phi)) * math.exp(pc.t1)
    lower_ratio = float(scaled.min())
    upper_ratio = float(scaled.max())
    holds = bool(lower_ratio >= 1.0 - eta and upper_ratio <= 2.0 * (1.0 + eta))
    holds_stated = bool(lower_ratio >= (1.0 - eta) / 2.0 and upper_ratio <= 1.0 + eta)
    profile = scaled * np.cos(phi / 2.0) ** 2
    worst = float(np.max(np.maximum(profile, 1.0 / profile)))
    return DerivativeBoundReport(
        holds=holds,
        holds_stated=holds_stated,
        worst_ratio=worst,
        lower_ratio=lower_ratio,
        upper_ratio=upper_ratio,
        eta=eta,
    )


def expansion_bound(eta: float) -> float:
    """4(1 + eps) with eps = 2 eta / (1 - eta)."""
    return 4.0 * (1.0 + 2.0 * eta / (1.0 - eta))


def _merge(intervals: Iterable[Interval]) -> List[Interval]:
    merged: List[Interval] = []
    for lo, hi in sorted(intervals):
        if merged and lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return merged


def normalize_intervals(intervals: Iterable[Interval]) -> List[Interval]:
    """Map angle intervals into disjoint pieces of [-pi, pi]."""
    two_pi = 2.0 * math.pi
    pieces: List[Interval] = []
    for lo, hi in intervals:
        if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
            raise DomainError(f"invalid interval ({lo}, {hi})")
        if hi == lo:
            continue
        if hi - lo >= two_pi:
            return [(-math.pi, math.pi)]
        k = math.floor((lo + math.pi) / two_pi)
        lo, hi = lo - two_pi * k, hi - two_pi * k
        if hi <= math.pi:
            pieces.append((lo, hi))
        else:
            pieces.append((lo, math.pi))
            pieces.append((-math.pi, hi - two_pi))
    return _merge(pieces)


def interval_measure(intervals: Iterable[Interval]) -> float:
    """Normalized circle measure of a union of angle intervals."""
    return sum(hi - lo for lo, hi in normalize_intervals(intervals)) / (2.0 * math.pi)


def shadow_expansion_ratio(
    pc: PolarChange,
    intervals: Iterable[Interval],
    eta: float = DEFAULT_SHADOW_ETA,
    samples_per_piece: int = 257,
) -> float:
    """Relative size of Psi(A) inside the image U of [-pi/2, pi/2].

    Bounded by expansion_bound(eta) * interval_measure(A) whenever the
    derivative window holds.
    """

    report = derivative_bound_report(pc, eta)
    if not report.holds:
        raise PreconditionError(
            f"derivative window fails for t1={pc.t1}, t2={pc.t2} at eta={eta}",
            eta=eta,
        )
    pieces = normalize_intervals(intervals)
    if not pieces:
        return 0.0
    window = _angle_unchecked(pc, np.array([-math.pi / 2.0, math.pi / 2.0]))
    u_lo, u_hi = float(window[0]), float(window[1])
    two_pi = 2.0 * math.pi
    images: List[Interval] = []
    for lo, hi in pieces:
        psis = np.unwrap(_angle_unchecked(pc, np.linspace(lo, hi, samples_per_piece)))
        a, b = float(psis.min()), float(psis.max())
        for shift in (-two_pi, 0.0, two_pi):
            lo2, hi2 = max(a + shift, u_lo), min(b + shift, u_hi)
            if hi2 > lo2:
                images.append((lo2, hi2))
    covered = sum(hi - lo for lo, hi in _merge(images))
    return covered / (u_hi - u_lo)


def thin_triangle_constant() -> float:
    """Thinness of the ideal triangle, arccosh(sqrt 2) = log(1 + sqrt 2)."""
    return math.log(1.0 + math.sqrt(2.0))


def _to_hyperboloid(z: np.ndarray) -> np.ndarray:
    x, y = z.real, z.imag
    r2 = x * x + y * y
    return np.stack([(1.0 + r2) / (2.0 * y), x / y, (r2 - 1.0) / (2.0 * y)], axis=-1)


def _minkowski(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., 0] * v[..., 0] - u[..., 1] * v[..., 1] - u[..., 2] * v[..., 2]


def _hdist(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.arccosh(np.maximum(_minkowski(u, v), 1.0))


def _geodesic_samples(p: np.ndarray, q: np.ndarray, s: np.ndarray) -> np.ndarray:
    d = float(_hdist(p, q))
    if d < 1e-12:
        return np.repeat(p[None, :], s.size, axis=0)
    w1 = np.sinh((1.0 - s) * d) / math.sinh(d)
    w2 = np.sinh(s * d) / math.sinh(d)
    return w1[:, None] * p[None, :] + w2[:, None] * q[None, :]


def _distance_to_segment(x: np.ndarray, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    to_ends = np.minimum(_hdist(x, p[None, :]), _hdist(x, q[None, :]))
    normal = np.cross(p, q) * np.array([1.0, -1.0, -1.0])
    nn = float(_minkowski(normal, normal))
    if nn > -1e-18:
        return to_ends
    normal = normal / math.sqrt(-nn)
    signed = _minkowski(x, normal[None, :])
    foot = x + signed[:, None] * normal[None, :]
    foot = foot / np.sqrt(np.maximum(_minkowski(foot, foot), 1e-300))[:, None]
    seg_len = float(_hdist(p, q))
    inside = _hdist(foot, p[None, :]) + _hdist(foot, q[None, :]) <= seg_len + 1e-7
    return np.where(inside, np.arcsinh(np.abs(signed)), to_ends)


def triangle_thinness(
    a: HPoint,
    b: HPoint,
    c: HPoint,
    n_samples: int = 65,
    refine: bool = True,
) -> float:
    """Largest distance from a point of one side to the union of the other two."""

    verts = _to_hyperboloid(np.array([a.z, b.z, c.z]))
    best = 0.0
    for k in range(3):
        p, q = verts[k], verts[(k + 1) % 3]
        r = verts[(k + 2) % 3]

        def gap(s: np.ndarray, p: np.ndarray = p, q: np.ndarray = q, r: np.ndarray = r) -> np.ndarray:
            pts = _geodesic_samples(p, q, s)
            return np.minimum(_distance_to_segment(pts, q, r), _distance_to_segment(pts, r, p))

        grid = np.linspace(0.0, 1.0, n_samples)
        values = gap(grid)
        k_best = int(np.argmax(values))
        side_best = float(values[k_best])
        if refine and n_samples > 2:
            lo = grid[max(k_best - 1, 0)]
            hi = grid[min(k_best + 1, n_samples - 1)]
            res = minimize_scalar(
                lambda s: -float(gap(np.array([s]))[0]),
                bounds=(lo, hi),
                method="bounded",
                options={"xatol": 1e-10},
            )
            side_best = max(side_best, -float(res.fun))
        best = max(best, side_best)
    return best


def shadow_deviation(
    theta0: float,
    phi: float,
    S: float,
    T: float,
    n_samples: int = DEFAULT_GRID,
) -> float:
    """Largest gap between a broken geodesic and the geodesic it shadows.

    The broken path runs from i for time S in direction theta0, turns by phi
    and runs for time T; it is compared with the geodesic from i aimed at its
    endpoint, synchronized by distance from i. Lengths are hyperbolic
    distances and angles are true angles at the turning points.
    """

    if S <= 0.0 or T <= 0.0:
        raise DomainError("S and T must be positive")
    theta = theta0 + float(polar_angle(PolarChange(S, T), phi))
    head = Isometry2.rotation(theta0 / 2.0)
    leg = Isometry2.rotation(phi / 2.0) @ Isometry2.geodesic(S / 2.0) @ head
    worst = 0.0
    for t in np.linspace(0.0, S + T, n_samples):
        if t <= S:
            broken = apply(Isometry2.geodesic(t / 2.0) @ head, I_POINT)
        else:
            broken = apply(Isometry2.geodesic((t - S) / 2.0) @ leg, I_POINT)
        worst = max(worst, distance(broken, polar_point(float(t), theta)))
    return worst
