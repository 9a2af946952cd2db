import numpy as np
import pytest

from kslab.core.dynamics import simulate
from kslab.core.records import (
    EVENTS_FILE,
    RECORD_FILE,
    SNAPSHOT_FILE,
    Event,
    EventKind,
    RecordError,
    TrajectoryRecord,
    file_checksum,
    first_collapse_time,
)

from .helpers import collapse_record, static_record


def test_save_and_load_preserve_record(tmp_path, make_config):
    config = make_config()
    record = simulate(config, config.law, config.detectors, seed=np.random.SeedSequence(3, spawn_key=(0, 1)))
    record.events.append(Event(0.02, EventKind.CLUSTER_COLLAPSE, {"k": 2, "ell": 10.0, "cluster": [0, 4]}))

    files = record.save(tmp_path / "r")
    assert set(files) == {SNAPSHOT_FILE, EVENTS_FILE, RECORD_FILE}
    assert files[SNAPSHOT_FILE] == file_checksum(tmp_path / "r" / SNAPSHOT_FILE)

    loaded = TrajectoryRecord.load(tmp_path / "r")
    assert np.array_equal(loaded.times, record.times)
    assert np.array_equal(loaded.positions, record.positions)
    assert loaded.events == record.events
    assert loaded.steps == record.steps
    assert loaded.metadata["seed_key"] == [0, 1]


def test_snapshot_csv_layout(tmp_path):
    record = static_record([[0.5, 1.5], [2.0, -1.0], [0.0, 0.0], [1.0, 1.0], [3.0, 3.0]], [0.0, 0.1])
    record.save(tmp_path)
    lines = (tmp_path / SNAPSHOT_FILE).read_text(encoding="utf-8").splitlines()
    assert lines[0] == "t,particle,x,y"
    assert lines[1] == "0,0,0.5,1.5"
    assert len(lines) == 1 + 2 * 5


def test_saving_twice_gives_identical_bytes(tmp_path):
    record = collapse_record(6, 0.3)
    assert record.save(tmp_path / "a") == record.save(tmp_path / "b")


def test_load_rejects_missing_files(tmp_path):
    with pytest.raises(RecordError):
        TrajectoryRecord.load(tmp_path)


def test_load_rejects_truncated_snapshots(tmp_path):
    record = collapse_record(6, None)
    record.save(tmp_path)
    lines = (tmp_path / SNAPSHOT_FILE).read_text(encoding="utf-8").splitlines()
    (tmp_path / SNAPSHOT_FILE).write_text("\n".join(lines[:-1]) + "\n", encoding="utf-8")
    with pytest.raises(RecordError):
        TrajectoryRecord.load(tmp_path)


def test_active_slice_includes_blowup_snapshot():
    record = static_record(np.eye(5, 2), [0.0, 0.1, 0.2, 0.3], blowup_time=0.2)
    times, positions = record.pre_blowup()
    assert np.allclose(times, [0.0, 0.1, 0.2])
    assert positions.shape == (3, 5, 2)


def test_first_collapse_time():
    record = collapse_record(7, 0.4)
    assert first_collapse_time(record, 3, 49) == pytest.approx(0.4)
    assert first_collapse_time(record, 3, 7) is None
    assert first_collapse_time(collapse_record(7, None), 3, 49) is None
    assert record.count(EventKind.CLUSTER_COLLAPSE) == 1
