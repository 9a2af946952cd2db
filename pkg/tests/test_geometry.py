import itertools
import math

import numpy as np
import pytest

from kslab.core.geometry import (
    ClusterIndexSet,
    GeometryError,
    MonotoneFunction,
    barycentre_gap,
    barycentre_gap_many,
    cluster_dispersion,
    cluster_mean,
    g_eta_functional,
    g_functional,
    l_eta,
    l_functional,
    min_cluster_dispersion,
    pair_kernel,
    pairwise_dispersion,
    phi_a,
    phi_a_prime,
    phi_eta,
)


def brute_min_dispersion(pos, k):
    best = math.inf
    for idx in itertools.combinations(range(len(pos)), k):
        sel = pos[list(idx)]
        best = min(best, float(np.sum((sel - sel.mean(axis=0)) ** 2)))
    return best


def test_pair_kernel_values():
    assert np.allclose(pair_kernel((2.0, 0.0)), (-0.5, 0.0))
    assert np.array_equal(pair_kernel((0.0, 0.0)), np.zeros(2))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_pair_kernel_is_odd(seed):
    v = np.random.default_rng(seed).standard_normal(2)
    assert np.allclose(pair_kernel(v), -pair_kernel(-v))


def test_pair_kernel_rejects_non_planar():
    with pytest.raises(GeometryError):
        pair_kernel((1.0, 2.0, 3.0))
    with pytest.raises(GeometryError):
        pair_kernel((np.nan, 0.0))


def test_cluster_index_set_validation():
    assert ClusterIndexSet.of((3, 1)).indices == (1, 3)
    with pytest.raises(GeometryError):
        ClusterIndexSet((1,))
    with pytest.raises(GeometryError):
        ClusterIndexSet((2, 1))
    with pytest.raises(GeometryError):
        cluster_mean(np.zeros((3, 2)), ClusterIndexSet((0, 5)))


@pytest.mark.parametrize("seed,k", [(0, 2), (1, 3), (2, 5), (3, 8)])
def test_dispersion_pair_identity(seed, k):
    pos = np.random.default_rng(seed).standard_normal((10, 2))
    cluster = ClusterIndexSet(tuple(range(k)))
    assert np.isclose(cluster_dispersion(pos, cluster), pairwise_dispersion(pos, cluster))


def test_cluster_dispersion_is_translation_invariant():
    pos = np.random.default_rng(4).standard_normal((6, 2))
    cluster = ClusterIndexSet((0, 2, 4))
    assert np.isclose(cluster_dispersion(pos, cluster), cluster_dispersion(pos + (3.0, -7.0), cluster))


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_min_pair_dispersion_is_exact(seed):
    pos = np.random.default_rng(seed).standard_normal((12, 2))
    value, cluster = min_cluster_dispersion(pos, 2)
    assert np.isclose(value, brute_min_dispersion(pos, 2))
    assert np.isclose(value, cluster_dispersion(pos, cluster))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_min_triple_dispersion_finds_planted_cluster(seed):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-5, 5, (20, 2))
    pos[[3, 11, 17]] = (1.0, 1.0) + 1e-4 * rng.standard_normal((3, 2))
    value, cluster = min_cluster_dispersion(pos, 3)
    assert cluster.indices == (3, 11, 17)
    assert np.isclose(value, brute_min_dispersion(pos, 3))


@pytest.mark.parametrize("seed", [0, 1])
def test_min_triple_dispersion_never_below_true_minimum(seed):
    pos = np.random.default_rng(seed).standard_normal((9, 2))
    value, cluster = min_cluster_dispersion(pos, 3)
    assert value >= brute_min_dispersion(pos, 3) - 1e-12
    assert np.isclose(value, cluster_dispersion(pos, cluster))


def test_min_dispersion_full_cluster():
    pos = np.random.default_rng(5).standard_normal((5, 2))
    value, cluster = min_cluster_dispersion(pos, 5)
    assert len(cluster) == 5
    assert np.isclose(value, brute_min_dispersion(pos, 5))


@pytest.mark.parametrize("pos", [
    [[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]],
    [[3.0, 3.0], [1.0, 0.0], [0.0, 1.0], [3.0, 3.0], [3.0, 3.0], [-1.0, -1.0]],
])
def test_min_pair_dispersion_with_coincident_points(pos):
    pos = np.array(pos)
    value, cluster = min_cluster_dispersion(pos, 2)
    assert value == 0.0
    i, j = cluster.indices
    assert i != j
    assert np.array_equal(pos[i], pos[j])


PAIRS = [
    (MonotoneFunction(lambda r: 1.0 / r), MonotoneFunction(lambda r: 1.0 / (r * r))),
    (MonotoneFunction(lambda r: np.exp(-r)), MonotoneFunction(lambda r: 1.0 / (1.0 + r))),
    (MonotoneFunction(lambda r: l_functional(r * r)), MonotoneFunction(lambda r: 1.0 / (r * r))),
]


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("pair", range(len(PAIRS)))
def test_barycentre_inequality_holds(seed, pair):
    phi, psi = PAIRS[pair]
    rng = np.random.default_rng(seed)
    for _ in range(200):
        x, y, z = rng.standard_normal((3, 2))
        X, Y = x - y, y - z
        delta, bound = barycentre_gap(X, Y, -X - Y, phi, psi)
        assert bound >= 0.0
        assert delta >= bound - 1e-9 * max(1.0, abs(delta))


def test_barycentre_gap_many_matches_scalar():
    rng = np.random.default_rng(12)
    pts = rng.standard_normal((300, 3, 2))
    X, Y = pts[:, 0] - pts[:, 1], pts[:, 1] - pts[:, 2]
    for phi, psi in PAIRS:
        delta, bound = barycentre_gap_many(X, Y, -X - Y, phi, psi)
        assert delta.shape == bound.shape == (300,)
        for m in (0, 17, 299):
            one = barycentre_gap(X[m], Y[m], -X[m] - Y[m], phi, psi)
            assert one == pytest.approx((delta[m], bound[m]), rel=1e-12)


def test_barycentre_gap_many_rejects_mismatched_shapes():
    phi, psi = PAIRS[0]
    with pytest.raises(GeometryError):
        barycentre_gap_many(np.ones((3, 2)), np.ones((2, 2)), np.ones((3, 2)), phi, psi)


def test_barycentre_gap_rejects_open_triangle():
    phi, psi = PAIRS[0]
    with pytest.raises(GeometryError):
        barycentre_gap((1.0, 0.0), (0.0, 1.0), (0.0, 0.0), phi, psi)


def test_barycentre_gap_rejects_zero_edge():
    phi, psi = PAIRS[0]
    with pytest.raises(GeometryError):
        barycentre_gap((1.0, 0.0), (0.0, 0.0), (-1.0, 0.0), phi, psi)


def test_l_functional_positive_and_decreasing():
    r = np.logspace(-8, 8, 400)
    values = l_functional(r)
    assert np.all(values > 0)
    assert np.all(np.diff(values) < 0)


def test_l_functional_large_argument_asymptotics():
    assert np.isclose(l_functional(1e6), 0.5e-12, rtol=1e-5)


@pytest.mark.parametrize("eta", [1e-3, 0.1, 1.0])
def test_phi_eta_derivative_is_l_eta(eta):
    r = np.linspace(0.05, 5.0, 50)
    h = 1e-6
    numeric = (phi_eta(r + h, eta) - phi_eta(r - h, eta)) / (2 * h)
    assert np.allclose(numeric, l_eta(r, eta), rtol=1e-5, atol=1e-9)


@pytest.mark.parametrize("a,gamma", [(0.1, 1.2), (1.0, 1.8)])
def test_phi_a_prime_matches_finite_difference(a, gamma):
    r = np.linspace(0.01, 4.0, 40)
    h = 1e-6
    numeric = (phi_a(r + h, a, gamma) - phi_a(r - h, a, gamma)) / (2 * h)
    assert np.allclose(numeric, phi_a_prime(r, a, gamma), rtol=1e-4)
    assert np.all((phi_a(r, a, gamma) > 0) & (phi_a(r, a, gamma) < 1))


def test_g_functional_coincidences():
    assert g_functional((0, 0), (0, 0), (0, 0)) == 0.0
    assert math.isinf(g_functional((0, 0), (0, 0), (1, 0)))


def test_g_functional_is_symmetric():
    x, y, z = np.random.default_rng(0).standard_normal((3, 2))
    base = g_functional(x, y, z)
    for perm in itertools.permutations((x, y, z)):
        assert np.isclose(g_functional(*perm), base)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_g_eta_converges_to_g(seed):
    x, y, z = np.random.default_rng(seed).standard_normal((3, 2))
    assert np.isclose(g_eta_functional(x, y, z, 1e-12), g_functional(x, y, z), rtol=1e-6)


@pytest.mark.parametrize("points,indices,expected", [
    ([(0, 0), (1, 0), (2, 0)], (0, 1, 2), 2.0),
    ([(0, 0), (2, 0)], (0, 1), 2.0),
    ([(1, 1), (1, 1), (1, 1)], (0, 1, 2), 0.0),
])
def test_cluster_dispersion_examples(points, indices, expected):
    assert cluster_dispersion(np.array(points, dtype=float), ClusterIndexSet(indices)) == pytest.approx(expected)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_pair_kernel_norm_is_inverse_distance(seed):
    v = np.random.default_rng(seed).standard_normal(2) * 10.0 ** seed
    assert np.isclose(np.linalg.norm(pair_kernel(v)), 1.0 / np.linalg.norm(v), rtol=1e-12)


def test_barycentre_gap_equilateral_is_zero():
    inverse_sq = MonotoneFunction(lambda r: 1.0 / (r * r))
    X = np.array([1.0, 0.0])
    Y = np.array([-0.5, math.sqrt(3) / 2])
    delta, bound = barycentre_gap(X, Y, -X - Y, inverse_sq, inverse_sq)
    assert delta == pytest.approx(0.0, abs=1e-12)
    assert bound == pytest.approx(0.0, abs=1e-12)


def test_g_functional_nonnegative_on_random_triangles():
    rng = np.random.default_rng(11)
    for _ in range(500):
        x, y, z = rng.standard_normal((3, 2))
        assert g_functional(x, y, z) >= -1e-9
