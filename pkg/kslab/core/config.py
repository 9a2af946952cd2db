"""
KS Lab - Configuration Module
Handles TOML config loading, defaults, dotted overrides and validation
"""

import copy
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import toml
from platformdirs import user_data_dir, user_log_dir

from . import KSLabError
from .dynamics import CollapseDetector, SimulationError, StepPolicy
from .initializers import InitialLaw, InitialLawError, MIN_PARTICLES

OUTPUT_ROOT_ENV = "KSLAB_OUTPUT_ROOT"

# Default configuration template
DEFAULT_CONFIG = {
    "model": {
        "theta": 1.0,
        "n": 21,
        "horizon": 1.0,
        "snapshot_interval": 0.01
    },
    "steps": {
        "dt_max": 1e-3,
        "proximity_exponent": 2.0,
        "taming_cap": 0.25,
        "substep_floor": 0.0,  # 0 means 1e-12 * dt_max
        "calibration": 0.05
    },
    "detectors": [
        {"k": 3, "ell": 1_000_000}
    ],
    "initial": {
        "kind": "AtomPlusJitter",
        "params": {
            "atoms": [[0.5, -1.0, 0.0], [0.5, 1.0, 0.0]],
            "jitter": 0.5
        }
    },
    "run": {
        "name": "run",
        "replicas": 32,
        "master_seed": 20240101,
        "workers": 0,  # 0 means os.cpu_count()
        "output_dir": ""  # Empty means <output root>/<name>
    },
    "diagnostics": {
        "selection": ["bessel_drift", "variance_drift", "bessel_qv", "centroid", "phase"],
        "gamma": 0.0,  # 0 means midway between theta and 2
        "triple_budget": 2000,
        "n_terms": 64,
        "holder_exponent": 0.25,
        "collision_scale": 1e-3,
        "isolation_alpha": 0.25,
        "isolation_radius": 0.01
    },
    "sweep": {
        "thetas": [],
        "ns": []
    },
    "ui": {
        "language": "en",  # en or it
        "verbosity": "normal"  # quiet, normal, verbose, debug
    },
    "logging": {
        "enabled": True
    }
}

KNOWN_DIAGNOSTICS = (
    "bessel_drift", "variance_drift", "bessel_qv", "centroid", "phase",
    "pair_moment", "g_monitor", "residual", "holder", "diffuseness", "isolated_pairs",
)


def n0_floor(theta: float) -> int:
    """Smallest admissible particle count: (1 + ceil(2/(2-theta))) v 5 below theta=2, else 5"""
    if theta >= 2:
        return MIN_PARTICLES
    # rounding absorbs representation error, e.g. 2/(2-1.9) = 20.000000000000018
    return max(1 + math.ceil(round(2.0 / (2.0 - theta), 9)), MIN_PARTICLES)


def ell_for(value: Any, n: int) -> float:
    """Resolve a detector threshold index; "N" means ell = N and "N^2" means ell = N^2"""
    if isinstance(value, str):
        token = value.strip().upper().replace(" ", "")
        if token == "N":
            return float(n)
        if token in ("N^2", "N**2", "N2"):
            return float(n * n)
        raise ConfigError(f"Unknown detector threshold {value!r} (use a number, \"N\" or \"N^2\")")
    return float(value)


def deep_merge(base: Dict[str, Any], overlay: Dict[str, Any]) -> Dict[str, Any]:
    """Merge overlay into a deep copy of base, section by section"""
    merged = copy.deepcopy(base)
    for section, values in overlay.items():
        if section in merged and isinstance(values, dict) and isinstance(merged[section], dict):
            merged[section] = deep_merge(merged[section], values)
        else:
            merged[section] = copy.deepcopy(values)
    return merged


def _merge_defaults(user: Dict[str, Any]) -> Dict[str, Any]:
    """Defaults overlaid by user values; detectors, and the params of a different law kind, are replaced"""
    merged = deep_merge(DEFAULT_CONFIG, user)
    if "detectors" in user:
        merged["detectors"] = copy.deepcopy(user["detectors"])
    initial = user.get("initial", {})
    default_kind = DEFAULT_CONFIG["initial"]["kind"]
    if isinstance(initial, dict) and initial.get("kind", default_kind) != default_kind:
        merged["initial"]["params"] = copy.deepcopy(initial.get("params", {}))
    return merged


def parse_override(item: str) -> Tuple[List[str], Any]:
    """Parse "a.b.c=value" with value read as a TOML scalar or array"""
    if "=" not in item:
        raise ConfigError(f"Override must look like key.path=value, got {item!r}")
    key, raw = item.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ConfigError(f"Empty key in override {item!r}")
    try:
        value = toml.loads(f"v = {raw.strip()}")["v"]
    except toml.TomlDecodeError:
        value = raw.strip()
    return path, value


def apply_overrides(config: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Apply dotted-path overrides to a config dict (returns a copy)"""
    out = copy.deepcopy(config)
    for item in overrides:
        path, value = parse_override(item)
        node = out
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"Override {item!r} descends into a non-section")
        node[path[-1]] = value
    return out


def output_root() -> Path:
    """Root for run directories; KSLAB_OUTPUT_ROOT wins over the platform default"""
    env = os.environ.get(OUTPUT_ROOT_ENV)
    if env:
        return Path(env)
    return Path(user_data_dir("kslab")) / "runs"


@dataclass
class SimConfig:
    """Validated parameters of one experiment cell"""

    theta: float
    n: int
    horizon: float
    snapshot_interval: float
    steps: StepPolicy
    detectors: List[CollapseDetector]
    law: InitialLaw
    replicas: int
    master_seed: int
    output_dir: Path
    name: str = "run"
    workers: int = 1
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    raw: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SimConfig":
        """Merge with defaults and validate; raises ConfigError naming the violated rule"""
        cfg = _merge_defaults(data)

        model, run = cfg["model"], cfg["run"]
        try:
            theta = float(model["theta"])
            n = int(model["n"])
            horizon = float(model["horizon"])
            interval = float(model["snapshot_interval"])
            replicas = int(run["replicas"])
            master_seed = int(run["master_seed"])
            workers = int(run["workers"]) or (os.cpu_count() or 1)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Malformed numeric value: {e}")

        if not theta > 0:
            raise ConfigError(f"model.theta must be > 0, got {theta}")
        if n < MIN_PARTICLES:
            raise ConfigError(f"model.n must be >= {MIN_PARTICLES}, got {n}")
        floor = n0_floor(theta)
        if n < floor:
            raise ConfigError(
                f"model.n={n} violates the N0 rule for theta={theta}: "
                f"N0 = (1 + ceil(2/(2 - theta))) v 5 = {floor}"
            )
        if horizon < 0:
            raise ConfigError(f"model.horizon must be >= 0, got {horizon}")
        if not interval > 0:
            raise ConfigError(f"model.snapshot_interval must be > 0, got {interval}")
        if replicas < 1:
            raise ConfigError(f"run.replicas must be >= 1, got {replicas}")
        if master_seed < 0:
            raise ConfigError(f"run.master_seed must be >= 0, got {master_seed}")

        steps_cfg = dict(cfg["steps"])
        if not steps_cfg.get("substep_floor"):
            steps_cfg["substep_floor"] = None
        try:
            steps = StepPolicy(**{k: (float(v) if v is not None else None) for k, v in steps_cfg.items()})
            detectors = [
                CollapseDetector(int(d["k"]), ell_for(d["ell"], n)) for d in cfg["detectors"]
            ]
        except (KeyError, TypeError) as e:
            raise ConfigError(f"Malformed steps/detectors section: {e}")
        except SimulationError as e:
            raise ConfigError(str(e))

        for d in detectors:
            if d.k > n:
                raise ConfigError(f"detector k={d.k} exceeds n={n}")
        if theta >= 2 and not any(d.k == 3 for d in detectors):
            raise ConfigError(
                f"theta={theta} >= 2 needs a k=3 detector: the system is only defined up to triple collapse"
            )

        try:
            law = InitialLaw(cfg["initial"]["kind"], cfg["initial"].get("params", {}))
        except InitialLawError as e:
            raise ConfigError(f"initial law: {e}")

        diag = dict(cfg["diagnostics"])
        unknown = [d for d in diag.get("selection", []) if d not in KNOWN_DIAGNOSTICS]
        if unknown:
            raise ConfigError(f"Unknown diagnostics: {', '.join(unknown)}")
        gamma = float(diag.get("gamma", 0.0))
        if gamma == 0.0 and theta < 2:
            diag["gamma"] = 0.5 * (theta + 2.0)
        elif gamma and not theta < gamma < 2:
            raise ConfigError(f"diagnostics.gamma must lie in (theta, 2) = ({theta}, 2), got {gamma}")

        name = str(run.get("name") or "run")
        output_dir = Path(run["output_dir"]) if run.get("output_dir") else output_root() / name

        cfg["model"].update(theta=theta, n=n, horizon=horizon, snapshot_interval=interval)
        cfg["steps"]["substep_floor"] = steps.substep_floor

        return cls(
            theta=theta,
            n=n,
            horizon=horizon,
            snapshot_interval=interval,
            steps=steps,
            detectors=detectors,
            law=law,
            replicas=replicas,
            master_seed=master_seed,
            output_dir=output_dir,
            name=name,
            workers=workers,
            diagnostics=diag,
            raw=cfg,
        )

    def to_dict(self) -> Dict[str, Any]:
        """Fully resolved configuration, echoed into run metadata"""
        out = copy.deepcopy(self.raw)
        out["run"]["output_dir"] = str(self.output_dir)
        out["diagnostics"] = copy.deepcopy(self.diagnostics)
        out["resolved_detectors"] = [{"k": d.k, "ell": d.ell} for d in self.detectors]
        return out

    def with_cell(self, theta: float, n: int, output_dir: Path) -> "SimConfig":
        """Copy of this template for one sweep cell"""
        data = copy.deepcopy(self.raw)
        data["model"]["theta"] = theta
        data["model"]["n"] = n
        data["run"]["output_dir"] = str(output_dir)
        return SimConfig.from_dict(data)


class Config:
    """Configuration file manager"""

    def __init__(self, config_file: Optional[Path] = None):
        self.config_file = Path(config_file) if config_file else None
        self.config: Dict[str, Any] = {}

    def load(self, overrides: Sequence[str] = ()) -> Dict[str, Any]:
        """Load configuration from file (if any), merge with defaults, apply overrides"""
        user: Dict[str, Any] = {}
        if self.config_file is not None:
            if not self.config_file.exists():
                raise ConfigError(f"Config file not found: {self.config_file}")
            try:
                user = toml.load(self.config_file)
            except (toml.TomlDecodeError, OSError) as e:
                raise ConfigError(f"Error loading config {self.config_file}: {e}")
        user = apply_overrides(user, overrides)
        self.config = _merge_defaults(user)
        return self.config

    def save(self, path: Path):
        """Save current configuration to file"""
        with open(path, 'w', encoding='utf-8') as f:
            toml.dump(self.config, f)

    def get(self, section: str, key: str, default: Any = None) -> Any:
        """Get configuration value"""
        return self.config.get(section, {}).get(key, default)

    def sim_config(self) -> SimConfig:
        return SimConfig.from_dict(self.config)

    @staticmethod
    def get_logs_dir() -> Path:
        """Get logs directory path"""
        logs_dir = Path(user_log_dir("kslab"))
        logs_dir.mkdir(parents=True, exist_ok=True)
        return logs_dir


class ConfigError(KSLabError):
    """Invalid configuration"""
    pass
