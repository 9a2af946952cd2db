import pytest

from kslab.core.config import OUTPUT_ROOT_ENV, Config, SimConfig, apply_overrides

from .helpers import SMALL_RUN


@pytest.fixture(autouse=True)
def isolated_dirs(tmp_path, monkeypatch):
    """Keep run output and log files inside the test's tmp dir"""
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path / "runs"))
    logs = tmp_path / "logs"
    monkeypatch.setattr(Config, "get_logs_dir", staticmethod(lambda: logs))


@pytest.fixture
def make_config(tmp_path):
    def build(*overrides, output="run"):
        target = (tmp_path / output).as_posix()
        data = apply_overrides(SMALL_RUN, [*overrides, f"run.output_dir='{target}'"])
        return SimConfig.from_dict(data)
    return build
