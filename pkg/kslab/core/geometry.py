"""
KS Lab - Geometry
Interaction kernel, cluster statistics and the barycentre inequality
"""

import math
from dataclasses import dataclass
from typing import Callable, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from . import KSLabError

# Absolute tolerance on each coordinate of X + Y + Z
CLOSURE_TOL = 1e-12

# Below this argument L(r) switches to its series in 1/r
_L_SERIES_SWITCH = 1e-4


def as_point(v) -> np.ndarray:
    """Coerce to a finite length-2 float array"""
    p = np.asarray(v, dtype=np.float64)
    if p.shape != (2,):
        raise GeometryError(f"Expected a planar point, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise GeometryError(f"Point has non-finite coordinates: {p}")
    return p


def as_positions(positions) -> np.ndarray:
    """Coerce a sequence of points to an (N, 2) float array"""
    arr = np.asarray(positions, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GeometryError(f"Expected positions of shape (N, 2), got {arr.shape}")
    return arr


@dataclass(frozen=True)
class ClusterIndexSet:
    """Strictly increasing set of (0-based) particle indices, size at least 2"""

    indices: Tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(idx) < 2:
            raise GeometryError(f"A cluster needs at least 2 particles, got {len(idx)}")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise GeometryError(f"Cluster indices must be strictly increasing: {idx}")
        if idx[0] < 0:
            raise GeometryError(f"Negative particle index in cluster: {idx}")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def of(cls, indices) -> "ClusterIndexSet":
        """Build from any iterable, sorting it first"""
        return cls(tuple(sorted(int(i) for i in indices)))

    def __len__(self) -> int:
        return len(self.indices)

    def check_against(self, n: int):
        if self.indices[-1] >= n:
            raise GeometryError(f"Cluster index {self.indices[-1]} out of range for {n} particles")


@dataclass(frozen=True)
class MonotoneFunction:
    """Evaluable r -> f(r) on (0, inf) with a declared monotonicity.

    The declaration is trusted at call time; tests check it.
    """

    func: Callable[[np.ndarray], np.ndarray]
    name: str = "f"
    nonincreasing: bool = True

    def __call__(self, r):
        return self.func(r)


def pair_kernel(v) -> np.ndarray:
    """K(v) = -v/|v|^2, with K(0) = 0 exactly"""
    p = as_point(v)
    r2 = p[0] * p[0] + p[1] * p[1]
    if r2 == 0.0:
        return np.zeros(2)
    return -p / r2


def cluster_mean(positions, cluster: ClusterIndexSet) -> np.ndarray:
    """S_K: arithmetic mean of the selected positions"""
    pos = as_positions(positions)
    cluster.check_against(pos.shape[0])
    return pos[list(cluster.indices)].mean(axis=0)


def cluster_dispersion(positions, cluster: ClusterIndexSet) -> float:
    """R_K: sum of squared distances of the cluster to its mean"""
    pos = as_positions(positions)
    cluster.check_against(pos.shape[0])
    sel = pos[list(cluster.indices)]
    centred = sel - sel.mean(axis=0)
    return float(np.sum(centred * centred))


def pairwise_dispersion(positions, cluster: ClusterIndexSet) -> float:
    """R_K through the pair identity (2|K|)^-1 sum_{i != j} |x^i - x^j|^2"""
    pos = as_positions(positions)
    cluster.check_against(pos.shape[0])
    sel = pos[list(cluster.indices)]
    diff = sel[:, None, :] - sel[None, :, :]
    return float(np.sum(diff * diff) / (2.0 * len(cluster)))


def min_cluster_dispersion(positions, k: int, tree: cKDTree = None) -> Tuple[float, ClusterIndexSet]:
    """Smallest R_K over size-k clusters found by nearest-neighbour local search.

    The minimising cluster is always the k nearest points of its own mean, so
    starting from every particle we alternate "k nearest of the current mean"
    and "mean of that set" until the set stops changing. Exact for k = 2.
    """
    pos = as_positions(positions)
    n = pos.shape[0]
    if not 2 <= k <= n:
        raise GeometryError(f"Cluster size {k} outside [2, {n}]")

    if k == n:
        centred = pos - pos.mean(axis=0)
        return float(np.sum(centred * centred)), ClusterIndexSet(tuple(range(n)))

    if tree is None:
        tree = cKDTree(pos)

    if k == 2:
        dist, idx = tree.query(pos, k=2)
        i = int(np.argmin(dist[:, 1]))
        # coincident points may list i itself as its second neighbour
        j = int(idx[i, 1]) if idx[i, 1] != i else int(idx[i, 0])
        return 0.5 * float(dist[i, 1]) ** 2, ClusterIndexSet.of((i, j))

    _, seeds = tree.query(pos, k=k)
    best_value = math.inf
    best_set: Tuple[int, ...] = ()
    for row in seeds:
        members = tuple(sorted(int(i) for i in row))
        for _ in range(8):
            centre = pos[list(members)].mean(axis=0)
            _, nxt = tree.query(centre, k=k)
            nxt = tuple(sorted(int(i) for i in np.atleast_1d(nxt)))
            if nxt == members:
                break
            members = nxt
        sel = pos[list(members)]
        centred = sel - sel.mean(axis=0)
        value = float(np.sum(centred * centred))
        if value < best_value:
            best_value, best_set = value, members
    return best_value, ClusterIndexSet(best_set)


def barycentre_gap(X, Y, Z, phi: MonotoneFunction, psi: MonotoneFunction) -> Tuple[float, float]:
    """
    Evaluate both sides of the barycentre inequality for a closed triangle.

    Args:
        X, Y, Z: Edge vectors with X + Y + Z = 0, none of them zero
        phi, psi: Nonincreasing positive functions of the edge length

    Returns:
        Tuple[float, float]: (delta, lower_bound) with delta >= lower_bound >= 0
    """
    delta, lower_bound = barycentre_gap_many(
        as_point(X)[None, :], as_point(Y)[None, :], as_point(Z)[None, :], phi, psi
    )
    return float(delta[0]), float(lower_bound[0])


def barycentre_gap_many(X, Y, Z, phi: MonotoneFunction, psi: MonotoneFunction) -> Tuple[np.ndarray, np.ndarray]:
    """barycentre_gap over M triangles at once; X, Y, Z are (M, 2) arrays and phi, psi act elementwise"""
    parts = [np.asarray(e, dtype=np.float64) for e in (X, Y, Z)]
    shapes = {p.shape for p in parts}
    if len(shapes) != 1 or len(parts[0].shape) != 2 or parts[0].shape[1] != 2:
        raise GeometryError(f"Expected three (M, 2) edge arrays, got shapes {[p.shape for p in parts]}")
    edges = np.stack(parts, axis=1)
    if not np.all(np.isfinite(edges)):
        raise GeometryError("Edges have non-finite coordinates")
    closure = edges.sum(axis=1)
    if np.any(np.abs(closure) > CLOSURE_TOL):
        worst = int(np.argmax(np.abs(closure).max(axis=1)))
        raise GeometryError(f"Edges do not close: X + Y + Z = {closure[worst]} (triangle {worst})")

    norms = np.hypot(edges[..., 0], edges[..., 1])
    if np.any(norms == 0.0):
        raise GeometryError("Barycentre inequality needs three nonzero edges")

    phi_r = np.asarray(phi(norms), dtype=np.float64)
    psi_r = np.asarray(psi(norms), dtype=np.float64)
    u = np.einsum("me,mec->mc", phi_r, edges)
    w = np.einsum("me,mec->mc", psi_r, edges)
    delta = np.einsum("mc,mc->m", u, w)

    order = np.argsort(norms, axis=1)
    a = np.take_along_axis(norms, order[:, :1], axis=1)[:, 0]
    phi_a, phi_b = np.take_along_axis(phi_r, order[:, :2], axis=1).T
    psi_a, psi_b = np.take_along_axis(psi_r, order[:, :2], axis=1).T
    lower_bound = (phi_a - phi_b) * (psi_a - psi_b) * a * a
    return delta, lower_bound


def l_functional(r):
    """L(r) = log(1 + 1/r) - 1/(1 + r), positive and decreasing on (0, inf)"""
    r = np.asarray(r, dtype=np.float64)
    u = 1.0 / r
    direct = np.log1p(u) - u / (1.0 + u)
    series = u * u * (0.5 - u * (2.0 / 3.0 - 0.75 * u))
    out = np.where(u < _L_SERIES_SWITCH, series, direct)
    return out if out.ndim else float(out)


def l_eta(r, eta: float):
    """L_eta(r) = L(eta + r)"""
    return l_functional(np.asarray(r, dtype=np.float64) + eta)


def phi_eta(r, eta: float):
    """phi_eta(r) = (r + eta) log(1 + 1/(eta + r)); its derivative is L_eta"""
    s = np.asarray(r, dtype=np.float64) + eta
    out = s * np.log1p(1.0 / s)
    return out if out.ndim else float(out)


def phi_a(r, a: float, gamma: float):
    """phi_a(r) = (r + a)^(gamma/2) / (1 + (r + a)^(gamma/2))"""
    p = np.power(np.asarray(r, dtype=np.float64) + a, gamma / 2.0)
    out = p / (1.0 + p)
    return out if out.ndim else float(out)


def phi_a_prime(r, a: float, gamma: float):
    """Derivative of phi_a in r"""
    s = np.asarray(r, dtype=np.float64) + a
    p = np.power(s, gamma / 2.0)
    out = 0.5 * gamma * np.power(s, gamma / 2.0 - 1.0) / (1.0 + p) ** 2
    return out if out.ndim else float(out)


def _triangle_edges(x, y, z):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    return x - y, y - z, z - x


def _g_family(x, y, z, weight: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    X, Y, Z = _triangle_edges(x, y, z)
    sq = [np.einsum("ij,ij->i", E, E) for E in (X, Y, Z)]
    zero = [s == 0.0 for s in sq]
    any_zero = zero[0] | zero[1] | zero[2]
    all_zero = zero[0] & zero[1] & zero[2]

    out = np.zeros(X.shape[0])
    ok = ~any_zero
    if np.any(ok):
        first = np.zeros((int(ok.sum()), 2))
        second = np.zeros_like(first)
        for E, s in zip((X, Y, Z), sq):
            Eo, so = E[ok], s[ok]
            first += weight(so)[:, None] * Eo
            second += Eo / so[:, None]
        out[ok] = np.einsum("ij,ij->i", first, second)
    out[any_zero & ~all_zero] = math.inf
    return out


def g_functional_many(x, y, z) -> np.ndarray:
    """Vectorised G over rows of (M, 2) arrays; inf marks partial coincidences"""
    return _g_family(x, y, z, l_functional)


def g_functional(x, y, z) -> float:
    """
    G(x, y, z) = (sum L(|E|^2) E) . (sum E/|E|^2) over the edges X=x-y, Y=y-z, Z=z-x.

    Returns inf when exactly one or two edges vanish and 0 when all three do.
    """
    return float(g_functional_many(as_point(x), as_point(y), as_point(z))[0])


def g_eta_functional(x, y, z, eta: float):
    """G_eta: G with L replaced by L_eta; increases to G as eta decreases to 0"""
    out = _g_family(x, y, z, lambda s: l_eta(s, eta))
    return out if out.shape[0] > 1 else float(out[0])


class GeometryError(KSLabError):
    """Precondition violation in a geometric primitive"""
    pass
