"""
KS Lab - Diagnostics
Estimators for dispersion drift, quadratic variation, moment bounds and explosion times
"""

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.spatial.distance import pdist, squareform
from scipy.stats import mannwhitneyu

from . import KSLabError
from .geometry import g_functional_many
from .records import TrajectoryRecord, first_collapse_time
from ..ui.logger import get_logger

logger = get_logger(__name__)

MIN_DRIFT_REPLICAS = 30
MIN_EXPLOSION_REPLICAS = 50
# Fraction of a blown-up path dropped from regression windows
BLOWUP_TAIL_FRACTION = 0.1
FULL_TRIPLE_ENUMERATION = 32


@dataclass
class DriftEstimate:
    slope: float
    stderr: float
    n_samples: int
    window: Tuple[float, float] = (0.0, 0.0)
    target: Optional[float] = None

    def __post_init__(self):
        if self.stderr < 0:
            raise DiagnosticsError(f"Negative standard error {self.stderr}")

    def relative_error(self) -> float:
        if not self.target:
            return math.inf
        return abs(self.slope - self.target) / abs(self.target)

    def to_dict(self) -> Dict:
        return {
            "value": self.slope,
            "stderr": self.stderr,
            "n": self.n_samples,
            "window": list(self.window),
            "target": self.target,
        }


@dataclass
class ScalarEstimate:
    value: float
    stderr: float
    n_samples: int
    window: Tuple[float, float] = (0.0, 0.0)
    target: Optional[float] = None

    def to_dict(self) -> Dict:
        return {
            "value": self.value,
            "stderr": self.stderr,
            "n": self.n_samples,
            "window": list(self.window),
            "target": self.target,
        }


@dataclass
class MomentIntegral:
    gamma: float
    value: float
    horizon: float
    stderr: float = 0.0
    n_samples: int = 0

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise DiagnosticsError(f"Moment integral is not finite for gamma={self.gamma}")

    def to_dict(self) -> Dict:
        return {
            "value": self.value,
            "stderr": self.stderr,
            "n": self.n_samples,
            "window": [0.0, self.horizon],
            "gamma": self.gamma,
        }


@dataclass
class DimensionTable:
    theta: float
    n: int
    dims: Dict[int, float]
    k2: Optional[int] = None


@dataclass
class RSeries:
    """A scalar path on snapshot times; blew_up marks paths that ended at a collapse"""

    times: np.ndarray
    values: np.ndarray
    blew_up: bool = False


@dataclass
class GMonitor:
    times: np.ndarray
    values: np.ndarray
    exceedances: np.ndarray

    def integral(self) -> float:
        if np.any(np.isinf(self.values)):
            return math.inf
        return float(trapezoid(self.values, self.times)) if len(self.times) > 1 else 0.0


@dataclass
class ExplosionRow:
    n: int
    median: float
    iqr: float
    replicas: int
    censored: int
    at_start: int = 0  # replicas whose detector already fired at t = 0


@dataclass
class ExplosionSummary:
    rows: List[ExplosionRow]
    p_values: List[float]
    monotone: bool
    hypothesis_violating: bool = False

    @property
    def fired_at_start(self) -> bool:
        return any(r.at_start for r in self.rows)

    @property
    def p_value(self) -> float:
        return max(self.p_values) if self.p_values else math.nan

    def to_dict(self) -> Dict:
        return {
            "rows": [asdict(r) for r in self.rows],
            "p_values": self.p_values,
            "p_value": self.p_value,
            "monotone": self.monotone,
            "hypothesis_violating": self.hypothesis_violating,
            "fired_at_start": self.fired_at_start,
        }


# -- phase and dimension bookkeeping ----------------------------------------

def critical_theta(n: int) -> float:
    """Above 2(N-2)/(N-1) three particles collide in finite time a.s."""
    return 2.0 * (n - 2) / (n - 1)


def phase(theta: float, n: int) -> str:
    if theta > critical_theta(n):
        return "explosive" if theta < 2 else ("critical" if theta == 2 else "supercritical")
    return "subcritical"


def ell_sequence(n: int) -> int:
    """Truncation level ell_N = N^2 used for critical-case explosion times"""
    return n * n


def dimension(theta: float, n: int, k: int) -> float:
    """d_{theta,N}(k) = (k - 1)(2 - k theta / N)"""
    return (k - 1) * (2.0 - k * theta / n)


def critical_dimension_scaled(n: int, k: int) -> int:
    """N * d_{2,N}(k) = 2(k - 1)(N - k), exact in integers"""
    return 2 * (k - 1) * (n - k)


def k2_critical(n: int) -> int:
    """
    k2 = min{k >= 3 : d_{2,N}(k) < 2}, i.e. (k - 1)(N - k) < N

    (k - 1)(N - k) is a downward parabola in k with roots 1 and N, so the
    admissible k form an upper tail; scan down from k = N.
    """
    if n < 5:
        raise DiagnosticsError(f"k2 needs N >= 5, got {n}")
    k = n
    while k - 1 >= 3 and (k - 2) * (n - k + 1) < n:
        k -= 1
    return k


def dimension_table(theta: float, n: int) -> DimensionTable:
    if n < 5:
        raise DiagnosticsError(f"Dimension table needs N >= 5, got {n}")
    dims = {k: dimension(theta, n, k) for k in range(2, n + 1)}
    return DimensionTable(theta, n, dims, k2_critical(n) if theta == 2 else None)


# -- dispersion paths -------------------------------------------------------

def global_dispersion(positions: np.ndarray) -> np.ndarray:
    """R over the full index set for every snapshot of an (S, N, 2) array"""
    centred = positions - positions.mean(axis=-2, keepdims=True)
    return np.einsum("...ij,...ij->...", centred, centred)


def global_dispersion_path(record: TrajectoryRecord, pre_blowup: bool = False) -> RSeries:
    """R_{[1,N]} at every snapshot (the frozen tail is constant)"""
    if len(record.times) == 0:
        raise DiagnosticsError("Empty record")
    if pre_blowup:
        times, positions = record.pre_blowup()
    else:
        times, positions = record.times, record.positions
    return RSeries(np.asarray(times), global_dispersion(positions), record.blew_up)


def _window(series: RSeries) -> RSeries:
    times, values = series.times, series.values
    if series.blew_up and len(times) > 1:
        keep = times <= times[0] + (1.0 - BLOWUP_TAIL_FRACTION) * (times[-1] - times[0])
        times, values = times[keep], values[keep]
    return RSeries(times, values, series.blew_up)


def _origin_slopes(paths: Sequence[RSeries], scale: float = 1.0) -> Tuple[np.ndarray, Tuple[float, float]]:
    slopes = []
    t_end = []
    for path in paths:
        w = _window(path)
        t = w.times - w.times[0]
        y = (w.values - w.values[0]) * scale
        denom = float(np.dot(t, t))
        if denom == 0.0:
            continue
        slopes.append(float(np.dot(t, y)) / denom)
        t_end.append(float(t[-1]))
    window = (0.0, float(np.median(t_end))) if t_end else (0.0, 0.0)
    return np.asarray(slopes), window


def bessel_drift_test(
    paths: Sequence[RSeries],
    theta: float,
    n: int,
    min_replicas: int = MIN_DRIFT_REPLICAS,
) -> DriftEstimate:
    """
    Regress E[R_t - R_0] on t; the slope estimates (N - 1)(2 - theta)

    Each replica contributes its own least-squares slope through the origin
    over its pre-blow-up window; the estimate is their mean.
    """
    slopes, window = _origin_slopes(paths)
    if len(slopes) < min_replicas:
        raise InsufficientDataError(f"bessel_drift_test needs {min_replicas} replicas, got {len(slopes)}")
    stderr = float(np.std(slopes, ddof=1) / math.sqrt(len(slopes)))
    return DriftEstimate(float(np.mean(slopes)), stderr, len(slopes), window, dimension(theta, n, n))


def variance_drift_test(
    paths: Sequence[RSeries],
    theta: float,
    n: int,
    min_replicas: int = MIN_DRIFT_REPLICAS,
) -> DriftEstimate:
    """Slope of the empirical variance V = R/N; target (1 - 1/N)(2 - theta)"""
    slopes, window = _origin_slopes(paths, scale=1.0 / n)
    if len(slopes) < min_replicas:
        raise InsufficientDataError(f"variance_drift_test needs {min_replicas} replicas, got {len(slopes)}")
    stderr = float(np.std(slopes, ddof=1) / math.sqrt(len(slopes)))
    return DriftEstimate(float(np.mean(slopes)), stderr, len(slopes), window, (1.0 - 1.0 / n) * (2.0 - theta))


def bessel_qv_test(paths: Sequence[RSeries], drift: Optional[float] = None, min_increments: int = 10) -> DriftEstimate:
    """
    Regress (dR - drift dt)^2 on 4 R dt; slope 1 for a squared Bessel process

    The drift is estimated from the pooled increments when not given.
    Standard error is heteroskedasticity-robust.
    """
    d_r, d_t, level = [], [], []
    for path in paths:
        w = _window(path)
        if len(w.times) < 2:
            continue
        d_r.append(np.diff(w.values))
        d_t.append(np.diff(w.times))
        level.append(w.values[:-1])
    if not d_r:
        raise InsufficientDataError("bessel_qv_test got no increments")
    d_r, d_t, level = np.concatenate(d_r), np.concatenate(d_t), np.concatenate(level)
    if len(d_r) < min_increments:
        raise InsufficientDataError(f"bessel_qv_test needs {min_increments} increments, got {len(d_r)}")

    if drift is None:
        drift = float(d_r.sum() / d_t.sum())
    y = (d_r - drift * d_t) ** 2
    x = 4.0 * level * d_t
    sxx = float(np.dot(x, x))
    if sxx == 0.0:
        raise InsufficientDataError("bessel_qv_test: dispersion is identically zero")
    slope = float(np.dot(x, y)) / sxx
    resid = y - slope * x
    stderr = math.sqrt(float(np.dot(x * x, resid * resid))) / sxx
    return DriftEstimate(slope, stderr, len(d_r), (0.0, float(d_t.sum() / max(len(paths), 1))), 1.0)


# -- pair and triple functionals --------------------------------------------

def _pair_average(positions: np.ndarray, func: Callable[[np.ndarray], np.ndarray]) -> float:
    sq = pdist(positions, "sqeuclidean")
    with np.errstate(divide="ignore"):
        return float(np.mean(func(sq)))


def pair_functional_path(record: TrajectoryRecord, func: Callable[[np.ndarray], np.ndarray]) -> RSeries:
    """All-pairs mean of func(|x_i - x_j|^2) on every pre-blow-up snapshot"""
    times, positions = record.pre_blowup()
    values = np.array([_pair_average(p, func) for p in positions])
    return RSeries(times, values, record.blew_up)


def pair_moment_integral(
    records: Sequence[TrajectoryRecord],
    gamma: float,
    horizon: float,
) -> MomentIntegral:
    """
    E[int_0^t |X^1 - X^2|^(gamma - 2) ds], with the (1, 2) pair replaced by the
    all-pairs average and the time integral stopped at blow-up
    """
    if not records:
        raise InsufficientDataError("pair_moment_integral needs at least one record")
    theta = records[0].theta
    if not theta < gamma < 2:
        raise DiagnosticsError(f"gamma must lie in (theta, 2) = ({theta}, 2), got {gamma}")

    power = 0.5 * (gamma - 2.0)
    values = []
    for record in records:
        times, positions = record.pre_blowup()
        keep = times <= horizon + 1e-12
        times, positions = times[keep], positions[keep]
        if len(times) < 2:
            values.append(0.0)
            continue
        integrand = np.array([_pair_average(p, lambda s: np.power(s, power)) for p in positions])
        values.append(float(trapezoid(integrand, times)))

    values = np.asarray(values)
    stderr = float(np.std(values, ddof=1) / math.sqrt(len(values))) if len(values) > 1 else 0.0
    return MomentIntegral(gamma, float(values.mean()), horizon, stderr, len(values))


def _sample_triples(n: int, budget: int, rng: np.random.Generator) -> np.ndarray:
    triples = rng.integers(0, n, size=(budget, 3))
    while True:
        bad = (triples[:, 0] == triples[:, 1]) | (triples[:, 0] == triples[:, 2]) | (triples[:, 1] == triples[:, 2])
        if not bad.any():
            return triples
        triples[bad] = rng.integers(0, n, size=(int(bad.sum()), 3))


def g_functional_monitor(record: TrajectoryRecord, triple_budget: int, rng: np.random.Generator) -> GMonitor:
    """
    Per-snapshot average of G over index triples (all triples when N <= 32)

    A triple with a partial coincidence gives G = inf; it saturates that
    snapshot's average and is counted in exceedances.
    """
    if triple_budget < 1:
        raise DiagnosticsError(f"triple_budget must be >= 1, got {triple_budget}")
    times, positions = record.pre_blowup()
    n = record.n
    full = None
    if n <= FULL_TRIPLE_ENUMERATION:
        full = np.array(list(itertools.combinations(range(n), 3)))

    values = np.empty(len(times))
    exceed = np.zeros(len(times), dtype=int)
    for s, pos in enumerate(positions):
        tri = full if full is not None else _sample_triples(n, triple_budget, rng)
        g = g_functional_many(pos[tri[:, 0]], pos[tri[:, 1]], pos[tri[:, 2]])
        inf = np.isinf(g)
        exceed[s] = int(inf.sum())
        values[s] = math.inf if exceed[s] else float(g.mean())
    return GMonitor(times, values, exceed)


# -- explosion times --------------------------------------------------------

def explosion_time_summary(
    groups: Mapping[int, Sequence[TrajectoryRecord]],
    ell: Optional[Callable[[int], float]] = None,
    min_replicas: int = MIN_EXPLOSION_REPLICAS,
) -> ExplosionSummary:
    """
    Median and IQR of the first triple-collapse time per N

    Censored replicas (no collapse before the horizon) rank above every
    observed time. Replicas whose detector fired on the initial cloud are
    counted in at_start: their time says nothing about the dynamics.
    Consecutive N are compared with a one-sided Mann-Whitney test.
    """
    ell = ell or ell_sequence
    rows: List[ExplosionRow] = []
    samples: List[np.ndarray] = []
    violating = False
    cap = 0.0
    for n in sorted(groups):
        records = groups[n]
        if len(records) < min_replicas:
            raise InsufficientDataError(f"explosion_time_summary needs {min_replicas} replicas for N={n}, got {len(records)}")
        taus = []
        for r in records:
            tau = first_collapse_time(r, 3, ell(n))
            taus.append(math.inf if tau is None else tau)
            cap = max(cap, r.horizon)
            if r.theta == 2 and r.metadata.get("single_atom"):
                violating = True
        taus = np.asarray(taus)
        q25, q50, q75 = np.quantile(taus, [0.25, 0.5, 0.75], method="inverted_cdf")
        iqr = math.inf if math.isinf(q75) else float(q75 - q25)
        at_start = int((taus == 0.0).sum())
        if at_start:
            logger.warning("diagnostics.collapse_at_start", n=n, count=at_start, total=len(taus), ell=f"{ell(n):g}")
        rows.append(ExplosionRow(n, float(q50), iqr, len(taus), int(np.isinf(taus).sum()), at_start))
        samples.append(taus)

    if violating:
        logger.warning("diagnostics.dirac_initial_law")

    p_values = []
    for low, high in zip(samples, samples[1:]):
        a = np.where(np.isinf(low), cap + 1.0, low)
        b = np.where(np.isinf(high), cap + 1.0, high)
        p_values.append(float(mannwhitneyu(a, b, alternative="less").pvalue))

    medians = [r.median for r in rows]
    monotone = all(a <= b for a, b in zip(medians, medians[1:]))
    return ExplosionSummary(rows, p_values, monotone, violating)


def collapse_fraction(records: Sequence[TrajectoryRecord], k: int, ell: float, before: float) -> float:
    """Fraction of replicas whose size-k collapse at 1/ell happened before the given time"""
    if not records:
        raise InsufficientDataError("collapse_fraction needs records")
    hits = 0
    for r in records:
        tau = first_collapse_time(r, k, ell)
        if tau is not None and tau < before:
            hits += 1
    return hits / len(records)


# -- centroid and isolated clusters -----------------------------------------

def centroid_msd(records: Sequence[TrajectoryRecord], horizon: float) -> ScalarEstimate:
    """Mean-square centroid displacement over [0, horizon]; target 2 horizon / N"""
    disp = []
    for r in records:
        if r.blowup_time is not None and r.blowup_time < horizon:
            continue
        idx = int(np.searchsorted(r.times, horizon + 1e-12, side="right")) - 1
        if idx <= 0:
            continue
        delta = r.positions[idx].mean(axis=0) - r.positions[0].mean(axis=0)
        disp.append(float(delta @ delta))
    if len(disp) < 2:
        raise InsufficientDataError("centroid_msd needs at least two unexploded replicas")
    disp = np.asarray(disp)
    n = records[0].n
    return ScalarEstimate(
        float(disp.mean()), float(disp.std(ddof=1) / math.sqrt(len(disp))), len(disp),
        (0.0, horizon), 2.0 * horizon / n,
    )


def isolated_cluster_drift(
    records: Sequence[TrajectoryRecord],
    alpha: float,
    radius: float,
) -> DriftEstimate:
    """
    Drift of R_K for isolated close pairs; squared-Bessel dimension d_{theta,N}(2)

    A pair contributes the increment over a snapshot interval when, at its
    start, R_K <= radius and every other particle is at squared distance
    >= alpha from both members.
    """
    d_r: List[float] = []
    d_t: List[float] = []
    for record in records:
        times, positions = record.pre_blowup()
        for s in range(len(times) - 1):
            sq = squareform(pdist(positions[s], "sqeuclidean"))
            close = np.argwhere(np.triu(0.5 * sq <= radius, k=1))
            if len(close) == 0:
                continue
            nxt = squareform(pdist(positions[s + 1], "sqeuclidean"))
            for i, j in close:
                others = np.ones(record.n, dtype=bool)
                others[[i, j]] = False
                if sq[i, others].min() < alpha or sq[j, others].min() < alpha:
                    continue
                d_r.append(0.5 * (nxt[i, j] - sq[i, j]))
                d_t.append(times[s + 1] - times[s])

    if len(d_r) < 10:
        raise InsufficientDataError(f"isolated_cluster_drift found only {len(d_r)} isolated pair increments")
    d_r, d_t = np.asarray(d_r), np.asarray(d_t)
    slope = float(d_r.sum() / d_t.sum())
    resid = d_r - slope * d_t
    stderr = float(np.std(resid, ddof=1) * math.sqrt(len(d_r)) / d_t.sum())
    theta, n = records[0].theta, records[0].n
    return DriftEstimate(slope, stderr, len(d_r), (0.0, float(d_t.mean())), dimension(theta, n, 2))


# -- report -----------------------------------------------------------------

class DiagnosticsReport:
    """Named estimates plus time series; JSON for estimates, CSV per series"""

    def __init__(self):
        self.estimates: Dict[str, Dict] = {}
        self.series: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}
        self.failures: Dict[str, str] = {}

    def add(self, name: str, estimate):
        self.estimates[name] = estimate.to_dict() if hasattr(estimate, "to_dict") else dict(estimate)

    def add_series(self, name: str, times: np.ndarray, values: np.ndarray):
        self.series[name] = (np.asarray(times), np.asarray(values))

    def fail(self, name: str, reason: str):
        self.failures[name] = reason

    def to_dict(self) -> Dict:
        return {
            "estimates": self.estimates,
            "failures": self.failures,
            "series": sorted(self.series),
        }

    def write(self, directory: Path) -> List[Path]:
        """Write report.json and series/<name>.csv; returns the written paths"""
        directory = Path(directory)
        series_dir = directory / "series"
        series_dir.mkdir(parents=True, exist_ok=True)
        written = [directory / "report.json"]
        with open(written[0], "w", encoding="utf-8", newline="\n") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        for name, (times, values) in sorted(self.series.items()):
            path = series_dir / f"{name}.csv"
            with open(path, "w", encoding="utf-8", newline="\n") as f:
                f.write("t,value\n")
                np.savetxt(f, np.column_stack((times, values)), fmt="%.17g", delimiter=",")
            written.append(path)
        return written

    @staticmethod
    def load(directory: Path) -> Dict:
        with open(Path(directory) / "report.json", "r", encoding="utf-8") as f:
            return json.load(f)


class DiagnosticsError(KSLabError):
    """Invalid estimator input"""
    pass


class InsufficientDataError(DiagnosticsError):
    """Not enough replicas, increments or samples for an estimate"""
    pass
