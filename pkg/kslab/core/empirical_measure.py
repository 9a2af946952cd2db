"""
KS Lab - Empirical Measure
Weak metric on empirical measures, path modulus, weak-solution residual
"""

import hashlib
import math
from dataclasses import dataclass
from typing import List, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.spatial.distance import pdist

from . import KSLabError
from .geometry import as_positions
from .records import TrajectoryRecord
from ..ui.logger import get_logger

logger = get_logger(__name__)

DEFAULT_N_TERMS = 64
MAX_QUADRATURE_STEP = 0.05
C2_TOLERANCE = 1e-6


class Evaluable(Protocol):
    def value(self, points: np.ndarray) -> np.ndarray: ...
    def gradient(self, points: np.ndarray) -> np.ndarray: ...
    def laplacian(self, points: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Uniform-weight atom measure N^-1 sum delta_{x_i}"""

    atoms: np.ndarray

    def __post_init__(self):
        atoms = as_positions(self.atoms)
        if atoms.shape[0] < 1:
            raise EmpiricalMeasureError("An empirical measure needs at least one atom")
        object.__setattr__(self, "atoms", atoms)

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    def integrate(self, func) -> float:
        return float(np.mean(func(self.atoms)))

    @classmethod
    def from_record(cls, record: TrajectoryRecord, index: int) -> "EmpiricalMeasure":
        return cls(record.positions[index])


# -- test functions ---------------------------------------------------------

class GaussianWindowedWave:
    """
    phi(x) = w(x) cos(omega . (x - c) + phase) / C,  w(x) = exp(-|x - c|^2 / (2 s^2))

    C bounds sup |phi| + |grad phi| + |hess phi|_F before normalisation, so the
    normalised function satisfies the C2 bound by construction.
    """

    def __init__(self, omega, scale: float, center=(0.0, 0.0), phase: float = 0.0):
        self.omega = np.asarray(omega, dtype=np.float64)
        self.scale = float(scale)
        self.center = np.asarray(center, dtype=np.float64)
        self.phase = float(phase)
        if self.scale <= 0:
            raise EmpiricalMeasureError(f"Envelope scale must be > 0, got {scale}")
        self.norm = self.c2_bound(self.omega, self.scale)

    @staticmethod
    def c2_bound(omega: np.ndarray, scale: float) -> float:
        w = float(np.hypot(*omega))
        g = 1.0 / (scale * math.sqrt(math.e))
        return 1.0 + (w + g) + (w * w + 2.0 * w * g + math.sqrt(2.0) / scale ** 2)

    def _parts(self, points):
        u = as_positions(points) - self.center
        s2 = self.scale ** 2
        env = np.exp(-0.5 * np.einsum("ij,ij->i", u, u) / s2) / self.norm
        arg = u @ self.omega + self.phase
        return u, s2, env, np.cos(arg), np.sin(arg)

    def value(self, points) -> np.ndarray:
        _, _, env, c, _ = self._parts(points)
        return env * c

    def gradient(self, points) -> np.ndarray:
        u, s2, env, c, s = self._parts(points)
        return -env[:, None] * (c[:, None] * u / s2 + s[:, None] * self.omega)

    def hessian(self, points) -> np.ndarray:
        u, s2, env, c, s = self._parts(points)
        uu = np.einsum("pi,pj->pij", u, u)
        uw = np.einsum("pi,j->pij", u, self.omega)
        ww = np.outer(self.omega, self.omega)
        h = (
            c[:, None, None] * (uu / s2 ** 2 - np.eye(2) / s2)
            + s[:, None, None] * (uw + uw.transpose(0, 2, 1)) / s2
            - c[:, None, None] * ww
        )
        return env[:, None, None] * h

    def laplacian(self, points) -> np.ndarray:
        u, s2, env, c, s = self._parts(points)
        r2 = np.einsum("ij,ij->i", u, u)
        w2 = float(self.omega @ self.omega)
        return env * (c * (r2 / s2 ** 2 - 2.0 / s2) + 2.0 * s * (u @ self.omega) / s2 - c * w2)

    def c2_norm(self, points) -> np.ndarray:
        """Pointwise |phi| + |grad phi| + |hess phi|_F"""
        g = self.gradient(points)
        h = self.hessian(points)
        return (
            np.abs(self.value(points))
            + np.hypot(g[:, 0], g[:, 1])
            + np.sqrt(np.einsum("pij,pij->p", h, h))
        )

    def params(self) -> np.ndarray:
        return np.concatenate((self.omega, [self.scale], self.center, [self.phase]))


class GaussianBump(GaussianWindowedWave):
    """Zero-frequency member: a normalised Gaussian bump"""

    def __init__(self, center=(0.0, 0.0), scale: float = 1.0):
        super().__init__((0.0, 0.0), scale, center)


class LinearFunction:
    """phi(x) = a . x + b (unbounded; used for the centroid identity)"""

    def __init__(self, a, b: float = 0.0):
        self.a = np.asarray(a, dtype=np.float64)
        self.b = float(b)

    def value(self, points) -> np.ndarray:
        return as_positions(points) @ self.a + self.b

    def gradient(self, points) -> np.ndarray:
        return np.broadcast_to(self.a, as_positions(points).shape).copy()

    def laplacian(self, points) -> np.ndarray:
        return np.zeros(as_positions(points).shape[0])


class ConstantFunction(LinearFunction):
    def __init__(self, c: float):
        super().__init__((0.0, 0.0), c)


class ShiftedFunction:
    """phi + c"""

    def __init__(self, inner: Evaluable, shift: float):
        self.inner = inner
        self.shift = float(shift)

    def value(self, points) -> np.ndarray:
        return self.inner.value(points) + self.shift

    def gradient(self, points) -> np.ndarray:
        return self.inner.gradient(points)

    def laplacian(self, points) -> np.ndarray:
        return self.inner.laplacian(points)


class TestFunctionFamily:
    """
    Fixed, seeded family of Gaussian-windowed Fourier features

    Term n (0-based) carries weight 2^-(n+1). Even terms are cosines, odd
    terms sines. Frequencies, envelope scales and centres are drawn once from
    the seed; content_hash identifies the family in run metadata.
    """

    __test__ = False  # not a pytest class

    def __init__(
        self,
        n_terms: int = DEFAULT_N_TERMS,
        seed: int = 0,
        frequency_scale: float = 1.5,
        scale_range: Tuple[float, float] = (0.5, 3.0),
        center_scale: float = 2.0,
        verify_grid: int = 0,
    ):
        if n_terms < 1:
            raise EmpiricalMeasureError(f"n_terms must be >= 1, got {n_terms}")
        self.n_terms = n_terms
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.terms: List[GaussianWindowedWave] = []
        for j in range(n_terms):
            omega = frequency_scale * rng.standard_normal(2)
            scale = rng.uniform(*scale_range)
            center = center_scale * rng.standard_normal(2)
            phase = 0.0 if j % 2 == 0 else -0.5 * math.pi
            self.terms.append(GaussianWindowedWave(omega, scale, center, phase))
        self.weights = 0.5 ** np.arange(1, n_terms + 1)
        if verify_grid:
            self.verify_c2_bound(verify_grid)

    def __len__(self) -> int:
        return self.n_terms

    def __getitem__(self, index: int) -> GaussianWindowedWave:
        return self.terms[index]

    @property
    def content_hash(self) -> str:
        digest = hashlib.sha256()
        digest.update(np.int64(self.n_terms).tobytes())
        for term in self.terms:
            digest.update(np.ascontiguousarray(term.params(), dtype="<f8").tobytes())
        return digest.hexdigest()

    def tail_bound(self, n_terms: Optional[int] = None) -> float:
        """Bound on the omitted terms: each |<phi_n, mu - nu>| <= 2"""
        n_terms = self.n_terms if n_terms is None else n_terms
        return 2.0 * 0.5 ** n_terms

    def moments(self, measure: EmpiricalMeasure, n_terms: Optional[int] = None) -> np.ndarray:
        """<phi_n, mu> for the first n_terms members"""
        n_terms = self._terms(n_terms)
        return np.array([float(np.mean(t.value(measure.atoms))) for t in self.terms[:n_terms]])

    def _terms(self, n_terms: Optional[int]) -> int:
        n_terms = self.n_terms if n_terms is None else int(n_terms)
        if not 1 <= n_terms <= self.n_terms:
            raise EmpiricalMeasureError(f"n_terms must lie in [1, {self.n_terms}], got {n_terms}")
        return n_terms

    def verify_c2_bound(self, grid: int = 1000, chunk: int = 100_000) -> float:
        """
        Sup of the C2 norm over a grid covering every envelope

        Raises:
            EmpiricalMeasureError: If any member exceeds 1 + C2_TOLERANCE
        """
        worst = 0.0
        for j, term in enumerate(self.terms):
            reach = 6.0 * term.scale
            axis = np.linspace(-reach, reach, grid)
            gx, gy = np.meshgrid(axis, axis)
            points = np.column_stack((gx.ravel(), gy.ravel())) + term.center
            for start in range(0, len(points), chunk):
                value = float(term.c2_norm(points[start:start + chunk]).max())
                worst = max(worst, value)
                if value > 1.0 + C2_TOLERANCE:
                    raise EmpiricalMeasureError(f"Test function {j} violates the C2 bound: {value:.9g}")
        return worst


def weak_distance(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    family: TestFunctionFamily,
    n_terms: Optional[int] = None,
) -> float:
    """delta(mu, nu) = sum_n 2^-n |<phi_n, mu> - <phi_n, nu>|, truncated (see family.tail_bound)"""
    n_terms = family._terms(n_terms)
    diff = np.abs(family.moments(mu, n_terms) - family.moments(nu, n_terms))
    return float(np.dot(family.weights[:n_terms], diff))


def holder_modulus(
    path: Sequence[Tuple[float, EmpiricalMeasure]],
    family: TestFunctionFamily,
    exponent: float = 0.25,
    n_terms: Optional[int] = None,
) -> float:
    """max over snapshot pairs s < t of delta(mu_s, mu_t) / (t - s)^exponent"""
    if len(path) < 2:
        raise EmpiricalMeasureError("holder_modulus needs at least two snapshots")
    n_terms = family._terms(n_terms)
    times = np.array([t for t, _ in path], dtype=float)
    moments = np.stack([family.moments(m, n_terms) for _, m in path])
    weights = family.weights[:n_terms]

    best = 0.0
    for s in range(len(times) - 1):
        gaps = times[s + 1:] - times[s]
        valid = gaps > 0
        if not valid.any():
            continue
        dist = np.abs(moments[s + 1:] - moments[s]) @ weights
        best = max(best, float(np.max(dist[valid] / gaps[valid] ** exponent)))
    return best


def record_path(record: TrajectoryRecord) -> List[Tuple[float, EmpiricalMeasure]]:
    """Pre-blow-up snapshots as (time, measure) pairs"""
    times, positions = record.pre_blowup()
    return [(float(t), EmpiricalMeasure(p)) for t, p in zip(times, positions)]


# -- weak-solution residual -------------------------------------------------

@dataclass
class ResidualSeries:
    times: np.ndarray
    values: np.ndarray
    coarse: bool = False


def interaction_term(positions: np.ndarray, phi: Evaluable) -> float:
    """(1/N^2) sum_{i,j} K(x_i - x_j) . (grad phi(x_i) - grad phi(x_j)), diagonal and coincidences 0"""
    n = positions.shape[0]
    grad = phi.gradient(positions)
    diff = positions[:, None, :] - positions[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    inv = np.divide(1.0, r2, out=np.zeros_like(r2), where=r2 > 0)
    kernel = -diff * inv[:, :, None]
    gdiff = grad[:, None, :] - grad[None, :, :]
    return float(np.einsum("ijk,ijk->", kernel, gdiff)) / (n * n)


def weak_solution_residual(
    record: TrajectoryRecord,
    phi: Evaluable,
    times: Optional[Sequence[float]] = None,
    max_quadrature_step: float = MAX_QUADRATURE_STEP,
) -> ResidualSeries:
    """
    R(t) = <phi, mu_t> - <phi, mu_0> - 1/2 int <lap phi, mu_s> ds
           - theta/2 int <<K(x - y) . (grad phi(x) - grad phi(y)), mu_s x mu_s>> ds

    Time integrals use the trapezoid rule on pre-blow-up snapshots. A snapshot
    spacing above max_quadrature_step is reported through the coarse flag.
    """
    snap_t, positions = record.pre_blowup()
    first = np.array([float(np.mean(phi.value(p))) for p in positions])
    lap = np.array([float(np.mean(phi.laplacian(p))) for p in positions])
    inter = np.array([interaction_term(p, phi) for p in positions])

    if len(snap_t) > 1:
        lap_int = cumulative_trapezoid(lap, snap_t, initial=0.0)
        inter_int = cumulative_trapezoid(inter, snap_t, initial=0.0)
    else:
        lap_int = inter_int = np.zeros(len(snap_t))
    values = (first - first[0]) - 0.5 * lap_int - 0.5 * record.theta * inter_int

    coarse = bool(len(snap_t) > 1 and np.max(np.diff(snap_t)) > max_quadrature_step)
    if coarse:
        logger.warning("measure.coarse_quadrature", step=f"{np.max(np.diff(snap_t)):.3g}", limit=max_quadrature_step)

    if times is None:
        return ResidualSeries(snap_t, values, coarse)

    idx = []
    for t in times:
        i = int(np.argmin(np.abs(snap_t - t)))
        if abs(snap_t[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise EmpiricalMeasureError(f"t={t} is not a pre-blow-up snapshot time")
        idx.append(i)
    return ResidualSeries(snap_t[idx], values[idx], coarse)


def residual_rms(records: Sequence[TrajectoryRecord], phi: Evaluable, t: float) -> float:
    """Root-mean-square of R(t) across replicas that reached t"""
    values = []
    for record in records:
        if record.blowup_time is not None and record.blowup_time < t:
            continue
        values.append(weak_solution_residual(record, phi, [t]).values[0])
    if not values:
        raise EmpiricalMeasureError(f"No replica reached t={t}")
    return float(np.sqrt(np.mean(np.square(values))))


# -- diffuseness ------------------------------------------------------------

@dataclass
class Diffuseness:
    fraction: float
    exact_fraction: float


def diffuseness_monitor(mu: EmpiricalMeasure, collision_scale: float) -> Diffuseness:
    """Fraction of ordered atom pairs closer than collision_scale (and exactly coincident)"""
    if collision_scale <= 0:
        raise EmpiricalMeasureError(f"collision_scale must be > 0, got {collision_scale}")
    if mu.size < 2:
        return Diffuseness(0.0, 0.0)
    dist = pdist(mu.atoms)
    return Diffuseness(float(np.mean(dist < collision_scale)), float(np.mean(dist == 0.0)))


def diffuseness_path(record: TrajectoryRecord, collision_scale: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(times, fraction, exact_fraction) over pre-blow-up snapshots"""
    times, positions = record.pre_blowup()
    rows = [diffuseness_monitor(EmpiricalMeasure(p), collision_scale) for p in positions]
    return (
        times,
        np.array([r.fraction for r in rows]),
        np.array([r.exact_fraction for r in rows]),
    )


class EmpiricalMeasureError(KSLabError):
    """Invalid measure, test-function family or residual input"""
    pass
