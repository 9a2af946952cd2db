"""
KS Lab - Acceptance Suite
Registered criteria evaluated by `verify` against completed run directories
"""

import math
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from . import KSLabError
from .bessel import BesselConfig, simulate_bessel_batch, zero_hitting_fraction
from .config import SimConfig
from .diagnostics import (
    DiagnosticsError,
    bessel_drift_test,
    bessel_qv_test,
    centroid_msd,
    collapse_fraction,
    critical_dimension_scaled,
    ell_sequence,
    explosion_time_summary,
    global_dispersion_path,
    k2_critical,
    pair_moment_integral,
    phase,
)
from .empirical_measure import ConstantFunction, EmpiricalMeasureError, residual_rms, weak_solution_residual
from .geometry import MonotoneFunction, barycentre_gap_many, l_functional
from .records import SNAPSHOT_FILE, TrajectoryRecord, file_checksum
from .runner import (
    MANIFEST_FILE,
    METADATA_FILE,
    ReplicaTask,
    config_from_metadata,
    load_run,
    read_json,
    replica_dir,
    residual_function,
    run_replica,
    sweep_cells,
)
from ..ui.logger import get_logger

logger = get_logger(__name__)

VERIFICATION_FILE = "verification.json"

PASS, FAIL, NOT_APPLICABLE, SKIPPED = "pass", "fail", "not_applicable", "skipped"

# Replica counts below which a statistical criterion is not evaluated
DRIFT_REPLICAS = 300
QV_REPLICAS = 30
CENTROID_REPLICAS = 500
PHASE_REPLICAS = 200
MOMENT_REPLICAS = 200
EXPLOSION_REPLICAS = 100
RESIDUAL_REPLICAS = 30

PHASE_ELL = 1e6
# Horizon over which each phase is judged
PHASE_HORIZONS = {"supercritical": 20.0, "subcritical": 5.0}
BARYCENTRE_TRIPLES = 100_000
BARYCENTRE_SLACK = 1e-9
COMBINATORICS_MAX_N = 10_000


@dataclass
class CellData:
    directory: Path
    metadata: Dict
    config: SimConfig
    records: List[TrajectoryRecord]

    @property
    def theta(self) -> float:
        return self.config.theta

    @property
    def n(self) -> int:
        return self.config.n


@dataclass
class RunContext:
    root: Path
    cells: List[CellData]
    resimulate: bool = True
    oracles: bool = False
    seed: int = 0

    @classmethod
    def from_directory(cls, root: Path, resimulate: bool = True, oracles: bool = False) -> "RunContext":
        root = Path(root)
        if not root.is_dir():
            raise VerificationError(f"Not a directory: {root}")
        dirs = [root] if (root / METADATA_FILE).exists() else sweep_cells(root)
        if not dirs:
            raise VerificationError(f"{root} contains no completed runs")
        cells = []
        for d in dirs:
            metadata, records = load_run(d)
            if not records:
                raise VerificationError(f"{d} has no replica directories")
            cells.append(CellData(d, metadata, config_from_metadata(metadata), records))
        return cls(root, cells, resimulate, oracles)


@dataclass
class CriterionResult:
    name: str
    status: str
    detail: str = ""
    values: Dict = field(default_factory=dict)


@dataclass
class VerificationSummary:
    directory: Path
    results: List[CriterionResult]

    @property
    def passed(self) -> bool:
        return all(r.status != FAIL for r in self.results)

    def to_dict(self) -> Dict:
        return {
            "directory": str(self.directory),
            "passed": self.passed,
            "criteria": {r.name: {k: v for k, v in asdict(r).items() if k != "name"} for r in self.results},
        }


Criterion = Callable[[RunContext], CriterionResult]
CRITERIA: List[Tuple[str, Criterion]] = []


def criterion(name: str):
    """Register an acceptance criterion"""
    def register(fn: Criterion) -> Criterion:
        CRITERIA.append((name, fn))
        return fn
    return register


def _result(name: str, failures: List[str], checked: List[str], values: Optional[Dict] = None,
            reason: str = "") -> CriterionResult:
    if not checked and not failures:
        return CriterionResult(name, NOT_APPLICABLE, reason or "no applicable runs")
    status = FAIL if failures else PASS
    return CriterionResult(name, status, "; ".join(failures or checked), values or {})


def _label(cell: CellData) -> str:
    return f"{cell.directory.name} (theta={cell.theta:g}, N={cell.n})"


def _groups(ctx: RunContext, predicate, min_replicas: int) -> Dict[float, List[CellData]]:
    groups: Dict[float, List[CellData]] = {}
    for cell in ctx.cells:
        if predicate(cell) and len(cell.records) >= min_replicas:
            groups.setdefault(cell.theta, []).append(cell)
    return {t: sorted(g, key=lambda c: c.n) for t, g in groups.items() if len(g) >= 2}


# -- integrity and determinism ----------------------------------------------

@criterion("integrity")
def check_integrity(ctx: RunContext) -> CriterionResult:
    failures, checked = [], []
    for cell in ctx.cells:
        manifest_path = cell.directory / MANIFEST_FILE
        if not manifest_path.exists():
            failures.append(f"{cell.directory.name}: {MANIFEST_FILE} missing")
            continue
        manifest = read_json(manifest_path)
        for rel, digest in sorted(manifest.items()):
            path = cell.directory / rel
            if not path.exists():
                failures.append(f"{cell.directory.name}/{rel}: missing")
            elif file_checksum(path) != digest:
                failures.append(f"{cell.directory.name}/{rel}: checksum mismatch")
        checked.append(f"{cell.directory.name}: {len(manifest)} files")
    return _result("integrity", failures, checked or failures)


@criterion("determinism")
def check_determinism(ctx: RunContext) -> CriterionResult:
    if not ctx.resimulate:
        return CriterionResult("determinism", SKIPPED, "re-simulation disabled")
    failures, checked = [], []
    for cell in ctx.cells:
        manifest_path = cell.directory / MANIFEST_FILE
        if not manifest_path.exists():
            continue
        expected = read_json(manifest_path).get(f"{replica_dir(Path('.'), 0).name}/{SNAPSHOT_FILE}")
        record = run_replica(ReplicaTask(cell.config, int(cell.metadata.get("cell", 0)), 0))
        with tempfile.TemporaryDirectory() as tmp:
            actual = record.save(Path(tmp))[SNAPSHOT_FILE]
        if actual != expected:
            failures.append(f"{cell.directory.name}: replica 0 re-simulation differs")
        checked.append(f"{cell.directory.name}: replica 0 reproduced")
    return _result("determinism", failures, checked)


# -- dispersion identities --------------------------------------------------

@criterion("dispersion_drift")
def check_dispersion_drift(ctx: RunContext) -> CriterionResult:
    failures, checked, values = [], [], {}
    for cell in ctx.cells:
        if not 0 < cell.theta < 2 or len(cell.records) < DRIFT_REPLICAS:
            continue
        paths = [global_dispersion_path(r, pre_blowup=True) for r in cell.records]
        est = bessel_drift_test(paths, cell.theta, cell.n)
        values[cell.directory.name] = est.to_dict()
        line = f"{_label(cell)}: slope {est.slope:.4g} vs {est.target:.4g}"
        if est.relative_error() > 0.10:
            failures.append(line)
        checked.append(line)
    return _result("dispersion_drift", failures, checked, values,
                   f"needs a subcritical run with >= {DRIFT_REPLICAS} replicas")


@criterion("critical_zero_drift")
def check_critical_zero_drift(ctx: RunContext) -> CriterionResult:
    failures, checked, values = [], [], {}
    for cell in ctx.cells:
        if cell.theta != 2 or len(cell.records) < DRIFT_REPLICAS:
            continue
        paths = [global_dispersion_path(r, pre_blowup=True) for r in cell.records]
        est = bessel_drift_test(paths, cell.theta, cell.n)
        values[cell.directory.name] = est.to_dict()
        line = f"{_label(cell)}: slope {est.slope:.4g} +- {est.stderr:.3g}"
        if abs(est.slope) > 3.0 * est.stderr:
            failures.append(line)
        checked.append(line)
    return _result("critical_zero_drift", failures, checked, values,
                   f"needs a theta=2 run with >= {DRIFT_REPLICAS} replicas")


@criterion("qv_rate")
def check_qv_rate(ctx: RunContext) -> CriterionResult:
    failures, checked, values = [], [], {}
    for cell in ctx.cells:
        if not 0 < cell.theta < 2 or len(cell.records) < QV_REPLICAS:
            continue
        est = bessel_qv_test([global_dispersion_path(r, pre_blowup=True) for r in cell.records])
        values[cell.directory.name] = est.to_dict()
        line = f"{_label(cell)}: slope {est.slope:.4g}"
        if not 0.85 <= est.slope <= 1.15:
            failures.append(line)
        checked.append(line)
    return _result("qv_rate", failures, checked, values,
                   f"needs a subcritical run with >= {QV_REPLICAS} replicas")


@criterion("centroid")
def check_centroid(ctx: RunContext) -> CriterionResult:
    failures, checked, values = [], [], {}
    for cell in ctx.cells:
        if len(cell.records) < CENTROID_REPLICAS or cell.config.horizon <= 0:
            continue
        est = centroid_msd(cell.records, cell.config.horizon)
        values[cell.directory.name] = est.to_dict()
        line = f"{_label(cell)}: msd {est.value:.4g} vs {est.target:.4g}"
        if abs(est.value - est.target) > 0.10 * est.target:
            failures.append(line)
        checked.append(line)
    return _result("centroid", failures, checked, values,
                   f"needs a run with >= {CENTROID_REPLICAS} replicas")


# -- phases and explosion ---------------------------------------------------

@criterion("phase_classification")
def check_phase_classification(ctx: RunContext) -> CriterionResult:
    failures, checked, values = [], [], {}
    for cell in ctx.cells:
        has_detector = any(d.k == 3 and d.ell == PHASE_ELL for d in cell.config.detectors)
        kind = phase(cell.theta, cell.n)
        window = PHASE_HORIZONS.get(kind)
        if not has_detector or window is None or len(cell.records) < PHASE_REPLICAS:
            continue
        if cell.config.horizon < window:
            continue
        frac = collapse_fraction(cell.records, 3, PHASE_ELL, window)
        values[cell.directory.name] = {"phase": kind, "collapse_fraction": frac, "before": window}
        ok = frac >= 0.99 if kind == "supercritical" else (1.0 - frac) >= 0.99
        line = f"{_label(cell)}: {kind}, collapse fraction before T={window:g} is {frac:.3f}"
        if not ok:
            failures.append(line)
        checked.append(line)
    return _result("phase_classification", failures, checked, values,
                   f"needs a sub- or supercritical run with a k=3, ell={PHASE_ELL:g} detector "
                   f"and >= {PHASE_REPLICAS} replicas, run to T=20 (supercritical) or T=5 (subcritical)")


@criterion("explosion_divergence")
def check_explosion_divergence(ctx: RunContext) -> CriterionResult:
    failures, checked, values = [], [], {}

    def eligible(cell: CellData) -> bool:
        return cell.theta == 2 and any(d.k == 3 and d.ell == ell_sequence(cell.n) for d in cell.config.detectors)

    for theta, group in _groups(ctx, eligible, EXPLOSION_REPLICAS).items():
        summary = explosion_time_summary({c.n: c.records for c in group}, min_replicas=EXPLOSION_REPLICAS)
        values[f"{theta:g}"] = summary.to_dict()
        medians = [r.median for r in summary.rows]
        strictly = all(a < b for a, b in zip(medians, medians[1:]))
        line = f"theta={theta:g}: medians {[round(m, 4) for m in medians]}, p={summary.p_value:.3g}"
        if summary.fired_at_start:
            at_start = {r.n: r.at_start for r in summary.rows if r.at_start}
            line += f", collapsed at t=0 {at_start}"
        if summary.fired_at_start or not strictly or not summary.p_value < 0.05:
            failures.append(line)
        checked.append(line)
    return _result("explosion_divergence", failures, checked, values,
                   f"needs >= 2 theta=2 runs over N with >= {EXPLOSION_REPLICAS} replicas each "
                   f"and a k=3, ell=N^2 detector")


# -- moments and residual ---------------------------------------------------

@criterion("moment_bound")
def check_moment_bound(ctx: RunContext) -> CriterionResult:
    failures, checked, values = [], [], {}
    for theta, group in _groups(ctx, lambda c: c.theta < 2, MOMENT_REPLICAS).items():
        full, half = [], []
        for cell in group:
            gamma = cell.config.diagnostics.get("gamma", 0.0)
            horizon = cell.config.horizon
            full.append(pair_moment_integral(cell.records, gamma, horizon).value)
            half.append(pair_moment_integral(cell.records, gamma, 0.5 * horizon).value)
        spread = max(full) / min(full) if min(full) > 0 else math.inf
        growth = max(f / h if h > 0 else math.inf for f, h in zip(full, half))
        values[f"{theta:g}"] = {"ns": [c.n for c in group], "values": full, "half_horizon": half}
        line = f"theta={theta:g}: spread {spread:.3g}, growth {growth:.3g}"
        if spread > 1.5 or growth > 2.5:
            failures.append(line)
        checked.append(line)
    return _result("moment_bound", failures, checked, values,
                   f"needs >= 2 subcritical runs over N with >= {MOMENT_REPLICAS} replicas each")


@criterion("residual_scaling")
def check_residual_scaling(ctx: RunContext) -> CriterionResult:
    failures, checked, values = [], [], {}
    phi = residual_function()
    constant = ConstantFunction(1.0)
    for cell in ctx.cells:
        series = weak_solution_residual(cell.records[0], constant)
        if np.any(series.values != 0.0):
            failures.append(f"{_label(cell)}: constant test function leaves a nonzero residual")
    eligible = lambda c: c.theta <= 2 and c.config.horizon > 0
    for theta, group in _groups(ctx, eligible, RESIDUAL_REPLICAS).items():
        rms = [residual_rms(c.records, phi, c.config.horizon) for c in group]
        values[f"{theta:g}"] = {"ns": [c.n for c in group], "rms": rms}
        pairs = list(zip(group, rms))
        for (a, ra), (b, rb) in zip(pairs, pairs[1:]):
            limit = 1.2 * math.sqrt(a.n / b.n)
            ratio = rb / ra if ra > 0 else math.inf
            line = f"theta={theta:g}: rms(N={b.n})/rms(N={a.n}) = {ratio:.3g} (limit {limit:.3g})"
            if ratio > limit:
                failures.append(line)
            checked.append(line)
    return _result("residual_scaling", failures, checked, values,
                   f"needs >= 2 runs over N at one theta with >= {RESIDUAL_REPLICAS} replicas each")


# -- pure and oracle checks -------------------------------------------------

@criterion("dimension_combinatorics")
def check_dimension_combinatorics(ctx: RunContext) -> CriterionResult:
    failures = []
    for n in range(5, COMBINATORICS_MAX_N + 1):
        k2 = k2_critical(n)
        if k2 not in (n - 2, n - 1):
            failures.append(f"N={n}: k2={k2}")
        k = np.arange(1, n + 1, dtype=np.int64)
        scaled = 2 * (k - 1) * (n - k)
        if not np.array_equal(scaled, scaled[::-1]) or scaled[2] != critical_dimension_scaled(n, 3):
            failures.append(f"N={n}: reflection symmetry broken")
        if len(failures) > 10:
            break
    return _result("dimension_combinatorics", failures, [f"N in [5, {COMBINATORICS_MAX_N}]"])


def _power(p: float) -> MonotoneFunction:
    return MonotoneFunction(lambda r, p=p: np.power(r, -p), f"r^-{p:.3g}")


def _barycentre_pairs(rng: np.random.Generator) -> List[Tuple[MonotoneFunction, MonotoneFunction]]:
    """Four (phi, psi) pairs from {r^-p, p in (0, 3]} and L(r^2)"""
    log_weight = MonotoneFunction(lambda r: l_functional(r * r), "L(r^2)")
    p = 3.0 - 3.0 * rng.random(4)
    return [
        (_power(p[0]), _power(p[1])),
        (log_weight, _power(p[2])),
        (_power(p[3]), log_weight),
        (log_weight, log_weight),
    ]


@criterion("barycentre_inequality")
def check_barycentre(ctx: RunContext) -> CriterionResult:
    if not ctx.oracles:
        return CriterionResult("barycentre_inequality", SKIPPED, "oracle checks disabled")
    rng = np.random.default_rng(np.random.SeedSequence(ctx.seed, spawn_key=(0,)))
    pts = rng.standard_normal((BARYCENTRE_TRIPLES, 3, 2))
    X = pts[:, 0] - pts[:, 1]
    Y = pts[:, 1] - pts[:, 2]
    Z = -X - Y
    violations, names = 0, []
    for phi, psi in _barycentre_pairs(rng):
        delta, bound = barycentre_gap_many(X, Y, Z, phi, psi)
        slack = BARYCENTRE_SLACK * np.maximum(np.maximum(np.abs(delta), np.abs(bound)), 1.0)
        violations += int(np.count_nonzero((delta < bound - slack) | (bound < -slack)))
        names.append(f"({phi.name}, {psi.name})")
    line = f"{BARYCENTRE_TRIPLES} triples x {len(names)} function pairs {', '.join(names)}: {violations} violations"
    return _result("barycentre_inequality", [line] if violations else [], [line])


@criterion("bessel_dichotomy")
def check_bessel_dichotomy(ctx: RunContext) -> CriterionResult:
    if not ctx.oracles:
        return CriterionResult("bessel_dichotomy", SKIPPED, "oracle checks disabled")
    above = zero_hitting_fraction(BesselConfig(3.0, 1.0, 5.0, 1e-4), 500, np.random.SeedSequence(ctx.seed, spawn_key=(1,)))
    below = zero_hitting_fraction(BesselConfig(1.0, 1.0, 5.0, 1e-4), 500, np.random.SeedSequence(ctx.seed, spawn_key=(2,)))
    line = f"d=3: {above:.3f} (<= 0.02), d=1: {below:.3f} (>= 0.5)"
    ok = above <= 0.02 and below >= 0.5
    return _result("bessel_dichotomy", [] if ok else [line], [line], {"d3": above, "d1": below})


@criterion("qv_oracle")
def check_qv_oracle(ctx: RunContext) -> CriterionResult:
    if not ctx.oracles:
        return CriterionResult("qv_oracle", SKIPPED, "oracle checks disabled")
    d = 19.0  # (N - 1)(2 - theta) at theta = 1, N = 20
    paths = simulate_bessel_batch(BesselConfig(d, 20.0, 1.0, 1e-4), 50,
                                  np.random.SeedSequence(ctx.seed, spawn_key=(3,)), record_every=100)
    est = bessel_qv_test(paths)
    line = f"synthetic dimension {d:g}: slope {est.slope:.4g}"
    return _result("qv_oracle", [] if 0.85 <= est.slope <= 1.15 else [line], [line], est.to_dict())


def verify(root: Path, resimulate: bool = True, oracles: bool = False) -> VerificationSummary:
    """
    Evaluate every registered criterion on a run or sweep directory

    Raises:
        VerificationError: If the directory holds no completed run
    """
    ctx = RunContext.from_directory(root, resimulate, oracles)
    results = []
    for name, check in CRITERIA:
        try:
            result = check(ctx)
        except (DiagnosticsError, EmpiricalMeasureError) as e:
            result = CriterionResult(name, FAIL, f"estimator failed: {e}")
        logger.info("verify.criterion", name=name, status=result.status)
        results.append(result)
    return VerificationSummary(Path(root), results)


class VerificationError(KSLabError):
    """Missing or unreadable artifacts"""
    pass
