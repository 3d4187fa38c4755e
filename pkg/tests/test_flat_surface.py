import math

import numpy as np
import pytest

from teich_recur.exceptions import (
    BudgetExceededError,
    ConstructionError,
    DisconnectedSurfaceError,
    DomainError,
    InvalidMatrixError,
)
from teich_recur.services.flat_surface import (
    apply_linear,
    build_origami,
    build_polygon,
    combine_drift,
    enumerate_saddle_connections,
    reduce_lattice_bases,
    shortest_saddle_connection,
    v0,
    v0_from_length,
)
from teich_recur.services.hyperbolic import Isometry2
from teich_recur.services.oracles import rotation_matrices


def primitive_count(L):
    bound = int(L)
    return sum(
        1
        for p in range(-bound, bound + 1)
        for q in range(-bound, bound + 1)
        if (p, q) != (0, 0) and math.gcd(p, q) == 1 and p * p + q * q <= L * L
    )


def test_torus_invariants(torus):
    assert torus.genus == 1
    assert torus.area == pytest.approx(1.0)
    assert torus.cone_multiples == (1,)


def test_three_square_origami_is_genus_two(origami3):
    assert origami3.genus == 2
    assert origami3.area == pytest.approx(3.0)
    assert origami3.cone_multiples == (3,)
    assert origami3.cone_points == [(0, 3)]


def test_regular_octagon(octagon):
    assert octagon.genus == 2
    assert octagon.cone_multiples == (3,)
    assert octagon.area == pytest.approx(2.0 * (1.0 + math.sqrt(2.0)))


def test_square_polygon_is_torus():
    square = build_polygon([(1, 0), (0, 1), (-1, 0), (0, -1)], [2, 3, 0, 1])
    assert square.genus == 1
    assert square.area == pytest.approx(1.0)


def test_polygon_validation():
    with pytest.raises(ConstructionError):
        build_polygon([(1, 0), (0, 1), (0, 0), (-1, 0), (0, -1)], [3, 4, 2, 0, 1])
    with pytest.raises(ConstructionError):
        build_polygon([(1, 0), (0, 1), (-1, 0), (0, -1)], [1, 0, 3, 2])
    with pytest.raises(ConstructionError):
        build_polygon([(1, 0), (0, 1)], [1, 0])


def test_origami_validation():
    with pytest.raises(DisconnectedSurfaceError):
        build_origami([0, 1], [0, 1])
    with pytest.raises(ConstructionError):
        build_origami([0, 0], [1, 0])
    with pytest.raises(ConstructionError):
        build_origami([], [])


def test_apply_linear_scales_holonomy(torus):
    pushed = apply_linear(torus, Isometry2.geodesic(math.log(2.0)))
    holonomies = sorted(sc.holonomy for sc in enumerate_saddle_connections(pushed, 0.6))
    assert holonomies == [pytest.approx((0.0, -0.5)), pytest.approx((0.0, 0.5))]
    assert pushed.area == pytest.approx(1.0)
    assert pushed.genus == torus.genus


def test_apply_linear_rejects_non_unimodular(torus):
    with pytest.raises(InvalidMatrixError):
        apply_linear(torus, [[2.0, 0.0], [0.0, 1.0]])


def test_transformed_surface_is_frozen(torus):
    pushed = apply_linear(torus, Isometry2.rotation(0.3))
    with pytest.raises(ValueError):
        pushed.edges[0, 0, 0] = 5.0


def test_torus_count_at_five(torus):
    assert len(enumerate_saddle_connections(torus, 5.0)) == 48


@pytest.mark.parametrize("L", [5.0, 10.0, 20.0])
def test_torus_counts_match_primitive_vectors(torus, L):
    assert len(enumerate_saddle_connections(torus, L)) == primitive_count(L)


def test_enumeration_sorted_and_within_length(origami3):
    found = enumerate_saddle_connections(origami3, 4.0)
    lengths = [sc.length for sc in found]
    assert lengths == sorted(lengths)
    assert max(lengths) <= 4.0 + 1e-12


def test_short_cutoff_finds_nothing(torus):
    assert enumerate_saddle_connections(torus, 0.5) == []


def test_origami_unit_connections(origami3):
    holonomies = {tuple(np.round(sc.holonomy, 9)) for sc in enumerate_saddle_connections(origami3, 1.0)}
    assert (0.0, 1.0) in holonomies
    assert (1.0, 0.0) in holonomies


@pytest.mark.parametrize("surface_name", ["torus", "origami3"])
def test_rotation_invariance_of_lengths(surface_name, torus, origami3):
    surface = {"torus": torus, "origami3": origami3}[surface_name]
    L = 4.5 if surface_name == "torus" else 3.5
    base = np.sort([sc.length for sc in enumerate_saddle_connections(surface, L)])
    rng = np.random.default_rng(3)
    for theta in rng.uniform(0.0, 2.0 * math.pi, 8):
        turned = apply_linear(surface, rotation_matrices(theta))
        lengths = np.sort([sc.length for sc in enumerate_saddle_connections(turned, L)])
        np.testing.assert_allclose(lengths, base, atol=1e-9)


def test_enumeration_budget(torus):
    with pytest.raises(BudgetExceededError) as info:
        enumerate_saddle_connections(torus, 20.0, budget=10)
    assert info.value.budget == 10


def test_enumeration_rejects_bad_cutoff(torus):
    with pytest.raises(DomainError):
        enumerate_saddle_connections(torus, -1.0)


def test_shortest_saddle_connection(torus, octagon):
    assert shortest_saddle_connection(torus) == pytest.approx(1.0)
    pushed = apply_linear(torus, Isometry2.geodesic(math.log(4.0)))
    assert shortest_saddle_connection(pushed) == pytest.approx(0.25)
    assert shortest_saddle_connection(octagon) == pytest.approx(1.0)


def test_lattice_reduction_finds_shortest_vector():
    basis = np.array([[1.0, 7.0], [0.0, 1.0]])
    reduced = reduce_lattice_bases(basis)
    assert np.linalg.norm(reduced[:, 0]) == pytest.approx(1.0)
    assert abs(np.linalg.det(reduced)) == pytest.approx(1.0)


@pytest.mark.parametrize("length, delta, expected", [(2.0, 0.5, 1.0), (0.25, 0.5, 8.0), (1.0, 0.3, 1.0)])
def test_v0_from_length(length, delta, expected):
    assert v0_from_length(length, delta) == pytest.approx(expected)


def test_v0_of_pushed_torus(torus):
    pushed = apply_linear(torus, Isometry2.geodesic(1.0))
    assert v0(pushed, 0.5) == pytest.approx(math.exp(1.5))
    with pytest.raises(DomainError):
        v0(torus, 1.0)


def test_combine_drift_weights():
    value, weights, b_tilde = combine_drift([1.0, 1.0, 1.0, 1.0], 1.0, 1.0, 0.5)
    assert weights.lambdas == pytest.approx((1.0, 1.0, 2.0, 4.0))
    assert value == pytest.approx(8.0)
    assert b_tilde == pytest.approx(4.0)
    assert weights.partial_sums_ok
    assert weights.c_tilde == pytest.approx(2.0)


def test_combine_drift_single_component():
    value, weights, _ = combine_drift([5.0], 2.0, 1.0, 1.0)
    assert value == pytest.approx(2.5)
    assert weights.lambdas == (0.5,)


def test_combine_drift_validation():
    with pytest.raises(DomainError):
        combine_drift([], 1.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        combine_drift([0.5], 1.0, 1.0, 1.0)


def _commutator_cycle_lengths(h, v):
    n = len(h)
    h_inv, v_inv = np.argsort(h), np.argsort(v)
    comm = [v_inv[h_inv[v[h[k]]]] for k in range(n)]
    seen, lengths = set(), []
    for start in range(n):
        if start in seen:
            continue
        k, length = start, 0
        while k not in seen:
            seen.add(k)
            k, length = comm[k], length + 1
        lengths.append(length)
    return sorted(lengths)


@pytest.mark.parametrize("n", [4, 5, 6, 7, 8])
def test_random_origami_satisfies_gauss_bonnet(n):
    rng = np.random.default_rng(100 + n)
    for _ in range(4):
        order = rng.permutation(n)
        h = [0] * n
        for i in range(n):
            h[order[i]] = int(order[(i + 1) % n])
        v = [int(k) for k in rng.permutation(n)]
        surface = build_origami(h, v)
        assert sum(surface.cone_multiples) == n
        assert sum(k - 1 for k in surface.cone_multiples) == 2 * surface.genus - 2
        assert sorted(surface.cone_multiples) == _commutator_cycle_lengths(h, v)
        assert surface.area == pytest.approx(n)
