"""
KS Lab - Experiment Runner
Runs replicas of a cell, writes the run directory and its diagnostics, runs sweeps
"""

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid

from . import KSLabError
from .config import ConfigError, SimConfig, n0_floor
from .diagnostics import (
    DiagnosticsError,
    DiagnosticsReport,
    InsufficientDataError,
    bessel_drift_test,
    bessel_qv_test,
    centroid_msd,
    critical_theta,
    explosion_time_summary,
    g_functional_monitor,
    global_dispersion,
    global_dispersion_path,
    isolated_cluster_drift,
    pair_moment_integral,
    phase,
    variance_drift_test,
)
from .dynamics import simulate
from .empirical_measure import (
    EmpiricalMeasureError,
    GaussianBump,
    TestFunctionFamily,
    diffuseness_path,
    holder_modulus,
    record_path,
    weak_solution_residual,
)
from .records import TrajectoryRecord, file_checksum
from .registry import REGISTRY_FILE, Registry
from .. import __version__
from ..ui.logger import get_logger, make_progress
from ..utils.pool import ReplicaPool

logger = get_logger(__name__)

METADATA_FILE = "metadata.json"
MANIFEST_FILE = "manifest.json"
REPORT_FILE = "report.json"
AGGREGATE_FILE = "aggregate.json"
FAMILY_SEED = 0
RESIDUAL_BUMP = {"center": (0.0, 0.0), "scale": 1.0}

# Files that legitimately differ between identical runs
UNMANIFESTED = (MANIFEST_FILE, REGISTRY_FILE)


@dataclass
class ReplicaTask:
    config: SimConfig
    cell: int
    replica: int


def replica_seed(master_seed: int, cell: int, replica: int) -> np.random.SeedSequence:
    """Independent stream for (cell, replica); child 0 draws the cloud, child 1 the noise"""
    return np.random.SeedSequence(master_seed, spawn_key=(cell, replica))


def run_replica(task: ReplicaTask) -> TrajectoryRecord:
    config = task.config
    seed = replica_seed(config.master_seed, task.cell, task.replica)
    return simulate(config, config.law, config.detectors, seed=seed)


def replica_dir(root: Path, replica: int) -> Path:
    return Path(root) / f"replica_{replica:04d}"


def write_json(path: Path, data) -> Path:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def read_json(path: Path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, ValueError) as e:
        raise RunError(f"Cannot read {path}: {e}")


def build_manifest(directory: Path) -> Dict[str, str]:
    """SHA-256 of every artifact under a run directory, keyed by relative path"""
    directory = Path(directory)
    manifest = {}
    for path in sorted(p for p in directory.rglob("*") if p.is_file()):
        rel = path.relative_to(directory).as_posix()
        if path.name in UNMANIFESTED and path.parent == directory:
            continue
        manifest[rel] = file_checksum(path)
    return manifest


def residual_function() -> GaussianBump:
    return GaussianBump(RESIDUAL_BUMP["center"], RESIDUAL_BUMP["scale"])


# -- diagnostics dispatch ---------------------------------------------------

def _dispersion_paths(records):
    return [global_dispersion_path(r, pre_blowup=True) for r in records]


def _mean_series(records, func) -> Tuple[np.ndarray, np.ndarray]:
    values = np.stack([func(r.positions) for r in records])
    return records[0].times, values.mean(axis=0)


def _diag_phase(config, records, report, cell):
    blowups = sum(1 for r in records if r.blew_up)
    report.add("phase", {
        "theta": config.theta,
        "n": config.n,
        "phase": phase(config.theta, config.n),
        "critical_theta": critical_theta(config.n),
        "n0_floor": n0_floor(config.theta),
        "blowups": blowups,
        "blowup_fraction": blowups / len(records),
    })


def _diag_bessel_drift(config, records, report, cell):
    report.add("bessel_drift", bessel_drift_test(_dispersion_paths(records), config.theta, config.n))
    report.add_series("dispersion_mean", *_mean_series(records, global_dispersion))


def _diag_variance_drift(config, records, report, cell):
    report.add("variance_drift", variance_drift_test(_dispersion_paths(records), config.theta, config.n))


def _diag_bessel_qv(config, records, report, cell):
    report.add("bessel_qv", bessel_qv_test(_dispersion_paths(records)))


def _diag_centroid(config, records, report, cell):
    report.add("centroid", centroid_msd(records, config.horizon))


def _diag_pair_moment(config, records, report, cell):
    report.add("pair_moment", pair_moment_integral(records, config.diagnostics.get("gamma", 0.0), config.horizon))


def _diag_g_monitor(config, records, report, cell):
    budget = int(config.diagnostics.get("triple_budget", 2000))
    integrals, exceed = [], 0
    for i, r in enumerate(records):
        rng = np.random.default_rng(np.random.SeedSequence(config.master_seed, spawn_key=(cell, i, 2)))
        monitor = g_functional_monitor(r, budget, rng)
        integrals.append(monitor.integral())
        exceed += int(monitor.exceedances.sum())
        if i == 0:
            report.add_series("g_monitor", monitor.times, monitor.values)
    integrals = np.asarray(integrals)
    finite = integrals[np.isfinite(integrals)]
    report.add("g_monitor", {
        "value": float(integrals.mean()),
        "stderr": float(finite.std(ddof=1) / math.sqrt(len(finite))) if len(finite) > 1 else 0.0,
        "n": len(integrals),
        "window": [0.0, config.horizon],
        "exceedances": exceed,
    })


def _diag_residual(config, records, report, cell):
    phi = residual_function()
    finals = []
    for i, r in enumerate(records):
        series = weak_solution_residual(r, phi)
        if i == 0:
            report.add_series("residual", series.times, series.values)
        if not r.blew_up:
            finals.append(series.values[-1])
    if not finals:
        raise InsufficientDataError("residual: every replica blew up before the horizon")
    finals = np.asarray(finals)
    report.add("residual", {
        "value": float(np.sqrt(np.mean(finals ** 2))),
        "stderr": float(np.std(finals ** 2, ddof=1) / math.sqrt(len(finals))) if len(finals) > 1 else 0.0,
        "n": len(finals),
        "window": [0.0, config.horizon],
    })


def _diag_holder(config, records, report, cell):
    family = TestFunctionFamily(int(config.diagnostics.get("n_terms", 64)), seed=FAMILY_SEED)
    exponent = float(config.diagnostics.get("holder_exponent", 0.25))
    moduli = np.array([
        holder_modulus(path, family, exponent)
        for path in (record_path(r) for r in records) if len(path) >= 2
    ])
    if len(moduli) == 0:
        raise InsufficientDataError("holder: no replica has two pre-blow-up snapshots")
    report.add("holder", {
        "value": float(moduli.mean()),
        "stderr": float(moduli.std(ddof=1) / math.sqrt(len(moduli))) if len(moduli) > 1 else 0.0,
        "n": len(moduli),
        "window": [0.0, config.horizon],
        "max": float(moduli.max()),
        "exponent": exponent,
    })


def _diag_diffuseness(config, records, report, cell):
    scale = float(config.diagnostics.get("collision_scale", 1e-3))
    near, exact = [], []
    for i, r in enumerate(records):
        times, frac, exact_frac = diffuseness_path(r, scale)
        if i == 0:
            report.add_series("diffuseness", times, frac)
        if len(times) > 1:
            near.append(float(trapezoid(frac, times)))
            exact.append(float(trapezoid(exact_frac, times)))
    report.add("diffuseness", {
        "value": float(np.mean(near)) if near else 0.0,
        "stderr": 0.0,
        "n": len(near),
        "window": [0.0, config.horizon],
        "exact": float(np.mean(exact)) if exact else 0.0,
        "collision_scale": scale,
    })


def _diag_isolated_pairs(config, records, report, cell):
    report.add("isolated_pairs", isolated_cluster_drift(
        records,
        float(config.diagnostics.get("isolation_alpha", 0.25)),
        float(config.diagnostics.get("isolation_radius", 0.01)),
    ))


DIAGNOSTICS: Dict[str, Callable] = {
    "phase": _diag_phase,
    "bessel_drift": _diag_bessel_drift,
    "variance_drift": _diag_variance_drift,
    "bessel_qv": _diag_bessel_qv,
    "centroid": _diag_centroid,
    "pair_moment": _diag_pair_moment,
    "g_monitor": _diag_g_monitor,
    "residual": _diag_residual,
    "holder": _diag_holder,
    "diffuseness": _diag_diffuseness,
    "isolated_pairs": _diag_isolated_pairs,
}


def run_diagnostics(config: SimConfig, records: Sequence[TrajectoryRecord], cell: int = 0) -> DiagnosticsReport:
    """Run the selected diagnostics; an estimator without enough data is recorded as a failure"""
    report = DiagnosticsReport()
    for name in config.diagnostics.get("selection", []):
        try:
            DIAGNOSTICS[name](config, records, report, cell)
        except (DiagnosticsError, EmpiricalMeasureError) as e:
            report.fail(name, str(e))
            logger.warning("runner.diagnostic_skipped", name=name, reason=str(e))
    return report


# -- cells ------------------------------------------------------------------

@dataclass
class CellResult:
    directory: Path
    records: List[TrajectoryRecord]
    report: DiagnosticsReport
    manifest: Dict[str, str]


def _metadata(config: SimConfig, cell: int, records: Sequence[TrajectoryRecord]) -> Dict:
    meta = {
        "kslab_version": __version__,
        "cell": cell,
        "config": config.to_dict(),
        "phase": phase(config.theta, config.n),
        "seeding": {"master_seed": config.master_seed, "spawn_key": ["cell", "replica"]},
        "replicas": [
            {
                "replica": i,
                "seed_key": r.metadata.get("seed_key"),
                "blowup_time": r.blowup_time,
                "steps": r.steps,
            }
            for i, r in enumerate(records)
        ],
    }
    selection = config.diagnostics.get("selection", [])
    if "holder" in selection:
        family = TestFunctionFamily(int(config.diagnostics.get("n_terms", 64)), seed=FAMILY_SEED)
        meta["test_function_family"] = {
            "n_terms": family.n_terms,
            "seed": FAMILY_SEED,
            "hash": family.content_hash,
        }
    if "residual" in selection:
        meta["residual_function"] = {
            "kind": "GaussianBump",
            "center": list(RESIDUAL_BUMP["center"]),
            "scale": RESIDUAL_BUMP["scale"],
        }
    return meta


def run_cell(
    config: SimConfig,
    cell: int = 0,
    registry: Optional[Registry] = None,
    pool: Optional[ReplicaPool] = None,
    show_progress: bool = True,
) -> CellResult:
    """
    Simulate every replica of one cell and write its run directory

    Args:
        config: Validated cell configuration
        cell: Cell index (part of every replica seed)
        registry: Optional registry receiving per-replica rows
        pool: Worker pool (defaults to config.workers processes)
        show_progress: Show a progress bar

    Returns:
        CellResult: Directory, records, report and manifest
    """
    directory = Path(config.output_dir)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise RunError(f"Cannot create run directory {directory}: {e}")
    pool = pool or ReplicaPool(config.workers)
    tasks = [ReplicaTask(config, cell, i) for i in range(config.replicas)]

    logger.info("runner.cell_start", cell=cell, theta=config.theta, n=config.n, replicas=config.replicas)
    if registry is not None:
        registry.set_status(cell, "running")

    checksums: Dict[int, str] = {}

    def persist(i: int, record: TrajectoryRecord):
        files = record.save(replica_dir(directory, i))
        checksums[i] = files["snapshots.csv"]
        if registry is not None:
            registry.add_replica(cell, i, record.metadata.get("seed_key", []), record.blowup_time,
                                 record.steps, checksums[i])

    if show_progress:
        with make_progress() as progress:
            task_id = progress.add_task(f"θ={config.theta:g} N={config.n}", total=len(tasks))

            def on_result(i, record):
                persist(i, record)
                progress.advance(task_id)

            records = pool.map(run_replica, tasks, on_result)
    else:
        records = pool.map(run_replica, tasks, persist)

    report = run_diagnostics(config, records, cell)
    report.write(directory)
    write_json(directory / METADATA_FILE, _metadata(config, cell, records))
    manifest = build_manifest(directory)
    write_json(directory / MANIFEST_FILE, manifest)

    if registry is not None:
        registry.set_status(cell, "done")
    blowups = sum(1 for r in records if r.blew_up)
    logger.info("runner.cell_done", cell=cell, blowups=blowups, replicas=len(records))
    return CellResult(directory, records, report, manifest)


def load_run(directory: Path) -> Tuple[Dict, List[TrajectoryRecord]]:
    """Metadata and replica records of a run directory"""
    directory = Path(directory)
    if not (directory / METADATA_FILE).exists():
        raise RunError(f"{directory} is not a run directory (no {METADATA_FILE})")
    metadata = read_json(directory / METADATA_FILE)
    records = [TrajectoryRecord.load(p) for p in sorted(directory.glob("replica_*")) if p.is_dir()]
    return metadata, records


def config_from_metadata(metadata: Dict) -> SimConfig:
    return SimConfig.from_dict(metadata["config"])


# -- sweeps -----------------------------------------------------------------

@dataclass
class SweepSpec:
    """Grids over theta and N applied to a template configuration"""

    template: SimConfig
    thetas: List[float]
    ns: List[int]

    def __post_init__(self):
        if not self.thetas or not self.ns:
            raise ConfigError("sweep needs nonempty sweep.thetas and sweep.ns grids")

    @classmethod
    def from_config(cls, raw: Dict, template: SimConfig) -> "SweepSpec":
        sweep = raw.get("sweep", {})
        try:
            thetas = [float(t) for t in sweep.get("thetas", [])]
            ns = [int(n) for n in sweep.get("ns", [])]
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Malformed sweep grid: {e}")
        return cls(template, thetas, ns)

    def cells(self) -> List[Tuple[int, float, int]]:
        return [(i, t, n) for i, (t, n) in enumerate(itertools.product(self.thetas, self.ns))]


@dataclass
class SweepResult:
    directory: Path
    cells: List[Dict] = field(default_factory=list)
    aggregate: Dict = field(default_factory=dict)

    @property
    def partial(self) -> bool:
        return any(c["status"] != "done" for c in self.cells)


def cell_dir(root: Path, cell: int, theta: float, n: int) -> Path:
    return Path(root) / f"cell_{cell:04d}_theta{theta:g}_n{n}"


def aggregate_cells(cells: Sequence[Tuple[SimConfig, Sequence[TrajectoryRecord]]]) -> Dict:
    """
    Cross-cell tables: explosion-time summary over N at theta = 2 and the
    pair moment integral over N at each subcritical theta
    """
    out: Dict = {"explosion_times": {}, "pair_moment": {}}
    by_theta: Dict[float, List[Tuple[SimConfig, Sequence[TrajectoryRecord]]]] = {}
    for config, records in cells:
        by_theta.setdefault(config.theta, []).append((config, records))

    for theta in sorted(by_theta):
        group = sorted(by_theta[theta], key=lambda c: c[0].n)
        key = f"{theta:g}"
        if theta == 2 and len(group) >= 2:
            try:
                summary = explosion_time_summary({c.n: recs for c, recs in group})
                out["explosion_times"][key] = summary.to_dict()
            except DiagnosticsError as e:
                out["explosion_times"][key] = {"error": str(e)}
        if theta < 2:
            rows = []
            for c, recs in group:
                try:
                    est = pair_moment_integral(recs, c.diagnostics.get("gamma", 0.0), c.horizon)
                    rows.append({"n": c.n, **est.to_dict()})
                except DiagnosticsError as e:
                    rows.append({"n": c.n, "error": str(e)})
            out["pair_moment"][key] = rows
    return out


def run_sweep(spec: SweepSpec, output_dir: Optional[Path] = None, show_progress: bool = True) -> SweepResult:
    """
    Run every (theta, N) cell, then aggregate over the completed ones

    A cell that fails validation or integration is marked failed in the
    registry; the aggregate proceeds over completed cells and is marked partial.
    """
    root = Path(output_dir or spec.template.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    result = SweepResult(root)
    completed: List[Tuple[SimConfig, List[TrajectoryRecord]]] = []

    with Registry(root / REGISTRY_FILE) as registry:
        for cell, theta, n in spec.cells():
            directory = cell_dir(root, cell, theta, n)
            registry.add_cell(cell, theta, n, directory)
            entry = {"cell": cell, "theta": theta, "n": n, "directory": directory.name}
            try:
                config = spec.template.with_cell(theta, n, directory)
                outcome = run_cell(config, cell, registry, show_progress=show_progress)
                completed.append((config, outcome.records))
                entry["status"] = "done"
            except KSLabError as e:
                registry.set_status(cell, "failed", str(e))
                logger.error("runner.cell_failed", cell=cell, theta=theta, n=n, error=str(e))
                entry.update(status="failed", error=str(e))
            result.cells.append(entry)

    result.aggregate = aggregate_cells(completed)
    if result.partial:
        logger.warning("runner.sweep_partial", failed=sum(1 for c in result.cells if c["status"] != "done"),
                       total=len(result.cells))
    write_json(root / AGGREGATE_FILE, {
        "cells": result.cells,
        "partial": result.partial,
        **result.aggregate,
    })
    return result


def sweep_cells(root: Path) -> List[Path]:
    """Cell run directories of a sweep, in cell order"""
    return sorted(p for p in Path(root).glob("cell_*") if (p / METADATA_FILE).exists())


class RunError(KSLabError):
    """Missing or unreadable run artifacts"""
    pass
