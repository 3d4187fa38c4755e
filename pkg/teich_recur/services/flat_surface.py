from __future__ import annotations

import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from teich_recur.config import get_settings
from teich_recur.exceptions import (
    BudgetExceededError,
    ConstructionError,
    DisconnectedSurfaceError,
    DomainError,
    InvalidMatrixError,
)
from teich_recur.models import DriftWeights, SaddleConnection
from teich_recur.services.hyperbolic import Isometry2

logger = logging.getLogger(__name__)

MatrixLike = Union[Isometry2, np.ndarray, Sequence[Sequence[float]]]

EDGE_TOL = 1e-9
ANGLE_TOL = 1e-6
DET_TOL = 1e-9
VISIBILITY_TOL = 1e-12


def _cross(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


class TranslationSurface:
    """Triangulated translation surface.

    ``edges[t, i]`` is the vector of edge i of triangle t, running from vertex
    i to vertex i + 1 counter-clockwise. ``gluing[3 t + i]`` is the slot glued
    to edge (t, i); glued edges carry opposite vectors. Every vertex class is
    a marked point, so the torus carries one marked point of angle 2 pi.
    """

    def __init__(
        self,
        edges: np.ndarray,
        gluing: Sequence[int],
        period_basis: Optional[np.ndarray] = None,
        name: Optional[str] = None,
    ) -> None:
        self.edges = np.array(edges, dtype=float)
        self.gluing = np.array(gluing, dtype=int)
        self.period_basis = None if period_basis is None else np.array(period_basis, dtype=float)
        self.name = name
        self._check_shapes()
        self._check_triangles()
        self._check_gluing()
        self.corner_vertex = self._vertex_classes()
        self.cone_multiples = self._cone_multiples()
        self.genus = self._check_gauss_bonnet()
        self._freeze()

    @classmethod
    def _transformed(cls, base: "TranslationSurface", matrix: np.ndarray) -> "TranslationSurface":
        obj = cls.__new__(cls)
        obj.edges = base.edges @ matrix.T
        obj.gluing = base.gluing
        obj.period_basis = None if base.period_basis is None else matrix @ base.period_basis
        obj.name = base.name
        obj.corner_vertex = base.corner_vertex
        obj.cone_multiples = base.cone_multiples
        obj.genus = base.genus
        obj._freeze()
        return obj

    def _freeze(self) -> None:
        self.edges.flags.writeable = False
        if self.period_basis is not None:
            self.period_basis.flags.writeable = False

    @property
    def n_triangles(self) -> int:
        return int(self.edges.shape[0])

    @property
    def n_vertices(self) -> int:
        return len(self.cone_multiples)

    @property
    def cone_points(self) -> List[Tuple[int, int]]:
        return list(enumerate(self.cone_multiples))

    @property
    def area(self) -> float:
        return float(0.5 * _cross(self.edges[:, 0], self.edges[:, 1]).sum())

    def min_edge_length(self) -> float:
        return float(np.linalg.norm(self.edges, axis=-1).min())

    def partner(self, tri: int, edge: int) -> Tuple[int, int]:
        slot = int(self.gluing[3 * tri + edge])
        return slot // 3, slot % 3

    def _check_shapes(self) -> None:
        if self.edges.ndim != 3 or self.edges.shape[1:] != (3, 2) or self.edges.shape[0] == 0:
            raise ConstructionError(f"edges must have shape (F, 3, 2), got {self.edges.shape}")
        if not np.all(np.isfinite(self.edges)):
            raise ConstructionError("edge vectors must be finite")
        if self.gluing.shape != (3 * self.edges.shape[0],):
            raise ConstructionError("gluing must have one entry per edge slot")

    def _check_triangles(self) -> None:
        scale = max(1.0, float(np.abs(self.edges).max()))
        closing = np.abs(self.edges.sum(axis=1)).max()
        if closing > EDGE_TOL * scale:
            raise ConstructionError(f"triangle edges do not close (residual {closing})")
        if np.any(np.linalg.norm(self.edges, axis=-1) <= EDGE_TOL * scale):
            raise ConstructionError("zero-length edge")
        if np.any(_cross(self.edges[:, 0], self.edges[:, 1]) <= 0.0):
            raise ConstructionError("triangles must be non-degenerate and counter-clockwise")

    def _check_gluing(self) -> None:
        n_slots = self.gluing.size
        slots = np.arange(n_slots)
        if np.any(self.gluing < 0) or np.any(self.gluing >= n_slots):
            raise ConstructionError("gluing refers to a non-existent edge slot")
        if np.any(self.gluing[self.gluing] != slots) or np.any(self.gluing == slots):
            raise ConstructionError("gluing must be a fixed-point-free involution")
        flat = self.edges.reshape(-1, 2)
        scale = max(1.0, float(np.abs(flat).max()))
        mismatch = np.abs(flat + flat[self.gluing]).max()
        if mismatch > EDGE_TOL * scale:
            raise ConstructionError(f"glued edges are not opposite vectors (mismatch {mismatch})")

    def _vertex_classes(self) -> np.ndarray:
        n_slots = self.gluing.size
        slots = np.arange(n_slots)
        tri, edge = slots // 3, slots % 3
        other = self.gluing
        o_tri, o_edge = other // 3, other % 3
        # start of an edge is the end of its partner and vice versa
        rows = np.concatenate([3 * tri + edge, 3 * tri + (edge + 1) % 3])
        cols = np.concatenate([3 * o_tri + (o_edge + 1) % 3, 3 * o_tri + o_edge])
        graph = coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n_slots, n_slots))
        _, labels = connected_components(graph, directed=False)
        # relabel by first appearance so ids do not depend on scipy internals
        order: Dict[int, int] = {}
        for label in labels:
            order.setdefault(int(label), len(order))
        return np.array([order[int(label)] for label in labels]).reshape(-1, 3)

    def corner_angles(self) -> np.ndarray:
        outgoing = self.edges
        incoming = -np.roll(self.edges, 1, axis=1)
        return np.arctan2(_cross(outgoing, incoming), (outgoing * incoming).sum(axis=-1))

    def _cone_multiples(self) -> Tuple[int, ...]:
        totals = np.zeros(int(self.corner_vertex.max()) + 1)
        np.add.at(totals, self.corner_vertex.ravel(), self.corner_angles().ravel())
        ratios = totals / (2.0 * math.pi)
        multiples = np.rint(ratios)
        if np.any(np.abs(ratios - multiples) > ANGLE_TOL) or np.any(multiples < 1):
            raise ConstructionError(f"cone angles are not positive multiples of 2 pi: {ratios}")
        return tuple(int(k) for k in multiples)

    def _check_gauss_bonnet(self) -> int:
        excess = sum(k - 1 for k in self.cone_multiples)
        euler = self.n_vertices - self.gluing.size // 2 + self.n_triangles
        if excess % 2 or excess != -euler:
            raise ConstructionError(
                f"Gauss-Bonnet fails: sum(k - 1) = {excess}, Euler characteristic {euler}"
            )
        return excess // 2 + 1

    def __repr__(self) -> str:
        label = self.name or "surface"
        return (
            f"TranslationSurface({label!r}, triangles={self.n_triangles}, "
            f"genus={self.genus}, cones={list(self.cone_multiples)})"
        )


def _check_permutation(perm: Sequence[int], n: int, label: str) -> List[int]:
    images = [int(k) for k in perm]
    if sorted(images) != list(range(n)):
        raise ConstructionError(f"{label} is not a permutation of {n} squares: {images}")
    return images


def build_origami(
    h: Sequence[int],
    v: Sequence[int],
    name: Optional[str] = None,
) -> TranslationSurface:
    """Glue unit squares: right side of square k to square h[k], top to v[k].

    Permutations are given as 0-based image lists. Each square is cut along
    its diagonal into a lower triangle with edges (1,0), (0,1), (-1,-1) and an
    upper triangle with edges (1,1), (-1,0), (0,-1).
    """

    n = len(h)
    if n == 0:
        raise ConstructionError("an origami needs at least one square")
    h_img = _check_permutation(h, n, "h")
    v_img = _check_permutation(v, n, "v")

    adjacency = coo_matrix(
        (np.ones(2 * n), (np.tile(np.arange(n), 2), np.array(h_img + v_img))),
        shape=(n, n),
    )
    n_components, _ = connected_components(adjacency, directed=False)
    if n_components != 1:
        raise DisconnectedSurfaceError(
            f"h and v do not act transitively ({n_components} orbits)"
        )

    lower = [(1.0, 0.0), (0.0, 1.0), (-1.0, -1.0)]
    upper = [(1.0, 1.0), (-1.0, 0.0), (0.0, -1.0)]
    edges = np.array([tri for _ in range(n) for tri in (lower, upper)])
    gluing = np.empty(6 * n, dtype=int)

    def glue(a: int, b: int) -> None:
        gluing[a] = b
        gluing[b] = a

    for k in range(n):
        low, up = 2 * k, 2 * k + 1
        glue(3 * low + 2, 3 * up + 0)
        glue(3 * low + 1, 3 * (2 * h_img[k] + 1) + 2)
        glue(3 * up + 1, 3 * (2 * v_img[k]) + 0)
    return TranslationSurface(edges, gluing, period_basis=np.eye(2), name=name)


def build_polygon(
    edges: Sequence[Sequence[float]],
    pairing: Sequence[int],
    name: Optional[str] = None,
) -> TranslationSurface:
    """Fan-triangulate a strictly convex counter-clockwise polygon.

    ``pairing[k]`` is the index of the side glued to side k by translation.
    """

    vecs = np.array(edges, dtype=float)
    m = vecs.shape[0] if vecs.ndim == 2 else 0
    if vecs.ndim != 2 or vecs.shape[1] != 2 or m < 3:
        raise ConstructionError("a polygon needs at least three 2-vector sides")
    if len(pairing) != m:
        raise ConstructionError("pairing must list one partner per side")
    scale = max(1.0, float(np.abs(vecs).max()))
    if np.any(np.linalg.norm(vecs, axis=1) <= EDGE_TOL * scale):
        raise ConstructionError("polygon has a zero-length side")
    if np.abs(vecs.sum(axis=0)).max() > EDGE_TOL * scale:
        raise ConstructionError("polygon does not close")
    partner = [int(p) for p in pairing]
    for k, p in enumerate(partner):
        if not 0 <= p < m or p == k or partner[p] != k:
            raise ConstructionError(f"pairing is not a fixed-point-free involution at side {k}")
        if np.abs(vecs[k] + vecs[p]).max() > EDGE_TOL * scale:
            raise ConstructionError(f"sides {k} and {p} are not opposite vectors")
    if np.any(_cross(vecs, np.roll(vecs, -1, axis=0)) <= 0.0):
        raise ConstructionError("polygon must be strictly convex and counter-clockwise")

    corners = np.vstack([np.zeros(2), np.cumsum(vecs, axis=0)[:-1]])
    n_tri = m - 2
    tri_edges = np.empty((n_tri, 3, 2))
    for k in range(n_tri):
        tri_edges[k, 0] = corners[k + 1]
        tri_edges[k, 1] = corners[k + 2] - corners[k + 1]
        tri_edges[k, 2] = -corners[k + 2]

    def side_slot(k: int) -> int:
        if k == 0:
            return 0
        if k == m - 1:
            return 3 * (n_tri - 1) + 2
        return 3 * (k - 1) + 1

    gluing = np.full(3 * n_tri, -1, dtype=int)
    for k in range(n_tri - 1):
        gluing[3 * k + 2] = 3 * (k + 1)
        gluing[3 * (k + 1)] = 3 * k + 2
    for k, p in enumerate(partner):
        gluing[side_slot(k)] = side_slot(p)
    return TranslationSurface(tri_edges, gluing, name=name)


def _as_matrix(A: MatrixLike) -> np.ndarray:
    if isinstance(A, Isometry2):
        return A.matrix()
    arr = np.asarray(A, dtype=float)
    if arr.shape != (2, 2) or not np.all(np.isfinite(arr)):
        raise InvalidMatrixError(f"expected a finite 2x2 matrix, got {arr!r}")
    det = float(np.linalg.det(arr))
    if abs(det - 1.0) > DET_TOL:
        raise InvalidMatrixError(f"matrix is not unimodular (det={det})")
    return arr


def apply_linear(s: TranslationSurface, A: MatrixLike) -> TranslationSurface:
    return TranslationSurface._transformed(s, _as_matrix(A))


def _segment_distance(a: np.ndarray, b: np.ndarray) -> float:
    d = b - a
    dd = float(d @ d)
    t = 0.0 if dd == 0.0 else min(1.0, max(0.0, -float(a @ d) / dd))
    return float(np.hypot(*(a + t * d)))


def _strictly_ccw(u: np.ndarray, v: np.ndarray) -> bool:
    return float(_cross(u, v)) > VISIBILITY_TOL * float(np.hypot(*u) * np.hypot(*v))


def enumerate_saddle_connections(
    s: TranslationSurface,
    L: float,
    budget: Optional[int] = None,
) -> List[SaddleConnection]:
    """All oriented saddle connections of length <= L.

    Each corner of each triangle sweeps the wedge between its two edges by
    unfolding triangles across the opposite edge. A vertex strictly inside
    the current wedge is visible, so it ends a saddle connection and splits
    the wedge in two. Branches whose crossing edge lies farther than L are
    pruned. Connections are keyed by starting corner, so parallel copies
    leaving different corners of the same cone point stay distinct.
    """

    if not (math.isfinite(L) and L > 0.0):
        raise DomainError(f"L must be positive, got {L}")
    cap = get_settings().budget if budget is None else budget
    edges = s.edges
    vertex = s.corner_vertex
    found: Dict[Tuple[int, int, int], SaddleConnection] = {}
    steps = 0

    def record(corner: int, hol: np.ndarray, start: int, end: int) -> None:
        if float(np.hypot(*hol)) > L:
            return
        key = (corner, int(round(hol[0] / EDGE_TOL)), int(round(hol[1] / EDGE_TOL)))
        if key in found:
            return
        found[key] = SaddleConnection((float(hol[0]), float(hol[1])), start, end)

    for tri in range(s.n_triangles):
        for i in range(3):
            corner = 3 * tri + i
            start = int(vertex[tri, i])
            p1 = edges[tri, i]
            p2 = -edges[tri, (i - 1) % 3]
            record(corner, p1, start, int(vertex[tri, (i + 1) % 3]))
            stack = [(tri, (i + 1) % 3, p1, p2, p1, p2)]
            while stack:
                t, j, a, b, w_cw, w_ccw = stack.pop()
                steps += 1
                if steps > cap:
                    raise BudgetExceededError(
                        f"saddle-connection enumeration exceeded {cap} steps at L={L}",
                        budget=cap,
                    )
                if _segment_distance(a, b) > L:
                    continue
                t2, j2 = s.partner(t, j)
                apex = a + edges[t2, (j2 + 1) % 3]
                right_of_ccw = _strictly_ccw(apex, w_ccw)
                left_of_cw = _strictly_ccw(w_cw, apex)
                if left_of_cw and right_of_ccw:
                    record(corner, apex, start, int(vertex[t2, (j2 + 2) % 3]))
                    stack.append((t2, (j2 + 1) % 3, a, apex, w_cw, apex))
                    stack.append((t2, (j2 + 2) % 3, apex, b, apex, w_ccw))
                elif not left_of_cw:
                    stack.append((t2, (j2 + 2) % 3, apex, b, w_cw, w_ccw))
                else:
                    stack.append((t2, (j2 + 1) % 3, a, apex, w_cw, w_ccw))

    logger.debug("enumerated %d saddle connections (L=%s, steps=%d)", len(found), L, steps)
    return sorted(
        found.values(),
        key=lambda sc: (round(sc.length, 9), round(sc.angle, 12), sc.start, sc.end),
    )


def reduce_lattice_bases(bases: np.ndarray, max_iter: int = 256) -> np.ndarray:
    """Lagrange-Gauss reduction of stacked 2x2 bases (vectors as columns).

    The first column of every output basis is a shortest non-zero lattice
    vector.
    """

    arr = np.asarray(bases, dtype=float)
    u = arr[..., :, 0].copy()
    v = arr[..., :, 1].copy()
    for _ in range(max_iter):
        swap = (v * v).sum(axis=-1) < (u * u).sum(axis=-1)
        u, v = np.where(swap[..., None], v, u), np.where(swap[..., None], u, v)
        mu = np.rint((u * v).sum(axis=-1) / (u * u).sum(axis=-1))
        if not np.any(mu != 0.0):
            break
        v = v - mu[..., None] * u
    else:
        logger.warning("lattice reduction stopped after %d iterations", max_iter)
    return np.stack([u, v], axis=-1)


def shortest_lattice_vector_length(bases: np.ndarray) -> np.ndarray:
    reduced = reduce_lattice_bases(bases)
    return np.linalg.norm(reduced[..., :, 0], axis=-1)


def shortest_saddle_connection(
    s: TranslationSurface,
    budget: Optional[int] = None,
) -> float:
    """Length of the shortest saddle connection.

    Square-tiled surfaces use their period lattice: every primitive lattice
    vector is a holonomy. Other surfaces enumerate with doubling L; every
    triangulation edge is a saddle connection, so L never needs to exceed the
    shortest edge.
    """

    if s.period_basis is not None:
        return float(shortest_lattice_vector_length(s.period_basis))
    # slack so the shortest edge itself is never lost to rounding
    ceiling = s.min_edge_length() * (1.0 + 1e-9)
    L = min(ceiling, math.sqrt(s.area) / 8.0)
    while True:
        found = enumerate_saddle_connections(s, L, budget=budget)
        if found:
            return found[0].length
        if L >= ceiling:
            raise ConstructionError("no saddle connection found up to the shortest edge")
        L = min(2.0 * L, ceiling)


def v0_from_length(length: Union[float, np.ndarray], delta: float) -> Union[float, np.ndarray]:
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    value = np.maximum(1.0, np.asarray(length, dtype=float) ** (-(1.0 + delta)))
    return float(value) if np.ndim(length) == 0 else value


def v0(s: TranslationSurface, delta: float, budget: Optional[int] = None) -> float:
    """max(1, l(q)^-(1 + delta))."""
    return v0_from_length(shortest_saddle_connection(s, budget=budget), delta)


def combine_drift(
    values: Sequence[float],
    c_tilde_prime: float,
    w: float,
    b_tilde_prime: float,
) -> Tuple[float, DriftWeights, float]:
    """Weighted sum of drift components V_0..V_n.

    lambda_0 = w / c', lambda_i = (c'/w + 1)^(i-1). The partial-sum condition
    sum_{i<j} lambda_i <= (c~ / 2w) lambda_j with c~ = 2c' is recorded on the
    weights rather than enforced.
    """

    if not values:
        raise DomainError("at least one component value is required")
    if any(not math.isfinite(x) or x < 1.0 for x in values):
        raise DomainError("component values must be finite and >= 1")
    for label, x in (("c_tilde_prime", c_tilde_prime), ("w", w), ("b_tilde_prime", b_tilde_prime)):
        if not (math.isfinite(x) and x > 0.0):
            raise DomainError(f"{label} must be positive, got {x}")

    lambdas = [w / c_tilde_prime] + [
        (c_tilde_prime / w + 1.0) ** (i - 1) for i in range(1, len(values))
    ]
    factor = 2.0 * c_tilde_prime / (2.0 * w)
    failing: Optional[int] = None
    running = 0.0
    for j in range(1, len(lambdas)):
        running += lambdas[j - 1]
        if running > factor * lambdas[j] * (1.0 + 1e-12):
            failing = j
            break
    if failing is not None:
        logger.warning("drift weights violate the partial-sum condition at j=%d", failing)

    weights = DriftWeights(
        c_tilde_prime=c_tilde_prime,
        w=w,
        lambdas=tuple(lambdas),
        partial_sums_ok=failing is None,
        failing_index=failing,
    )
    v_delta = float(sum(lam * x for lam, x in zip(lambdas, values)))
    return v_delta, weights, b_tilde_prime * float(sum(lambdas))


