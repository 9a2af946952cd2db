from pathlib import Path

import pytest
import toml

from kslab.core.config import (
    DEFAULT_CONFIG,
    OUTPUT_ROOT_ENV,
    Config,
    ConfigError,
    SimConfig,
    apply_overrides,
    ell_for,
    n0_floor,
    output_root,
    parse_override,
)
from kslab.core.initializers import LawKind


@pytest.mark.parametrize("theta,expected", [
    (0.5, 5), (1.0, 5), (1.5, 5), (1.8, 11), (1.9, 21), (2.0, 5), (3.0, 5),
])
def test_n0_floor(theta, expected):
    assert n0_floor(theta) == expected


def test_defaults_validate():
    config = SimConfig.from_dict({})
    assert config.theta == DEFAULT_CONFIG["model"]["theta"]
    assert config.law.kind is LawKind.ATOM_PLUS_JITTER
    assert config.diagnostics["gamma"] == pytest.approx(1.5)
    assert config.workers >= 1
    assert config.output_dir == output_root() / "run"


@pytest.mark.parametrize("overrides", [
    ["model.theta=0.0"],
    ["model.theta=-1.0"],
    ["model.n=4"],
    ["model.theta=1.9", "model.n=5"],
    ["model.horizon=-1.0"],
    ["model.snapshot_interval=0.0"],
    ["run.replicas=0"],
    ["run.master_seed=-1"],
    ["steps.taming_cap=1.5"],
    ["model.theta=2.0", "detectors=[{k=2, ell=100}]"],
    ["diagnostics.selection=['bogus']"],
    ["diagnostics.gamma=0.5"],
    ["detectors=[{k=30, ell=100}]"],
    ["detectors=[{k=3, ell='M'}]"],
    ["initial.kind='GaussianIID'", "initial.params.scale=-1.0"],
])
def test_invalid_configs(overrides):
    with pytest.raises(ConfigError):
        SimConfig.from_dict(apply_overrides({}, overrides))


def test_n0_violation_names_the_rule():
    with pytest.raises(ConfigError, match="N0"):
        SimConfig.from_dict(apply_overrides({}, ["model.theta=1.9", "model.n=5"]))


def test_detector_threshold_n_resolves_to_particle_count():
    config = SimConfig.from_dict(apply_overrides({}, ["model.n=12", "detectors=[{k=3, ell='N'}]"]))
    assert config.detectors[0].ell == 12.0
    assert ell_for("n", 7) == 7.0


@pytest.mark.parametrize("token", ["N^2", "n^2", "N**2", " N 2 "])
def test_detector_threshold_n_squared(token):
    assert ell_for(token, 8) == 64.0
    config = SimConfig.from_dict(apply_overrides({}, ["model.n=12", f"detectors=[{{k=3, ell='{token}'}}]"]))
    assert config.detectors[0].ell == 144.0


def test_detector_threshold_rejects_unknown_token():
    with pytest.raises(ConfigError):
        ell_for("2N", 8)


def test_supercritical_needs_triple_detector():
    config = SimConfig.from_dict(apply_overrides({}, ["model.theta=2.5", "model.n=8"]))
    assert any(d.k == 3 for d in config.detectors)


def test_new_law_kind_drops_default_params():
    config = SimConfig.from_dict({"initial": {"kind": "UniformDiskIID", "params": {"radius": 2.0}}})
    assert config.law.params == {"radius": 2.0}


def test_law_param_override_keeps_default_kind():
    config = SimConfig.from_dict(apply_overrides({}, ["initial.params.jitter=0.1"]))
    assert config.law.kind is LawKind.ATOM_PLUS_JITTER
    assert config.law.params["jitter"] == 0.1
    assert len(config.law.params["atoms"]) == 2


def test_to_dict_round_trips(tmp_path):
    config = SimConfig.from_dict({"run": {"output_dir": str(tmp_path)}, "model": {"theta": 1.2}})
    again = SimConfig.from_dict(config.to_dict())
    assert again.theta == config.theta
    assert again.detectors == config.detectors
    assert again.law.to_dict() == config.law.to_dict()
    assert again.output_dir == config.output_dir
    assert again.diagnostics == config.diagnostics


def test_with_cell_revalidates(tmp_path):
    config = SimConfig.from_dict({})
    cell = config.with_cell(2.0, 9, tmp_path / "c")
    assert (cell.theta, cell.n, cell.output_dir) == (2.0, 9, tmp_path / "c")
    with pytest.raises(ConfigError):
        config.with_cell(1.9, 6, tmp_path / "d")


@pytest.mark.parametrize("item,path,value", [
    ("model.theta=1.5", ["model", "theta"], 1.5),
    ("run.name=alpha", ["run", "name"], "alpha"),
    ("run.name='alpha'", ["run", "name"], "alpha"),
    ("sweep.ns=[10, 20]", ["sweep", "ns"], [10, 20]),
    ("logging.enabled=false", ["logging", "enabled"], False),
])
def test_parse_override(item, path, value):
    assert parse_override(item) == (path, value)


def test_parse_override_rejects_missing_value():
    with pytest.raises(ConfigError):
        parse_override("model.theta")


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "cell.toml"
    path.write_text(toml.dumps({"model": {"theta": 0.5, "n": 8}, "run": {"replicas": 4}}), encoding="utf-8")
    manager = Config(path)
    manager.load(["run.replicas=6"])
    config = manager.sim_config()
    assert (config.theta, config.n, config.replicas) == (0.5, 8, 6)
    assert manager.get("ui", "language") == "en"

    saved = tmp_path / "saved.toml"
    manager.save(saved)
    assert toml.load(saved)["run"]["replicas"] == 6


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        Config(tmp_path / "nope.toml").load()


def test_malformed_config_file(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("model = [", encoding="utf-8")
    with pytest.raises(ConfigError):
        Config(path).load()


def test_output_root_env(monkeypatch, tmp_path):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path / "elsewhere"))
    assert output_root() == Path(tmp_path / "elsewhere")
