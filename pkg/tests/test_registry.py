import pytest

from kslab.core.registry import Registry, RegistryError


@pytest.fixture
def registry(tmp_path):
    with Registry(tmp_path / "sub" / "registry.sqlite") as reg:
        yield reg


def test_cell_lifecycle(registry, tmp_path):
    registry.add_cell(0, 1.0, 10, tmp_path / "cell0")
    assert registry.get_cell(0)["status"] == "pending"

    registry.set_status(0, "running")
    assert registry.get_cell(0)["started_date"] is not None

    registry.set_status(0, "failed", "boom")
    cell = registry.get_cell(0)
    assert (cell["status"], cell["error_message"]) == ("failed", "boom")
    assert cell["completed_date"] is not None


def test_replicas_and_stats(registry, tmp_path):
    registry.add_cell(0, 2.0, 8, tmp_path / "a")
    registry.add_cell(1, 2.0, 9, tmp_path / "b")
    registry.add_replica(0, 0, (0, 0), 0.25, 120, "abc")
    registry.add_replica(0, 1, (0, 1), None, 300, "def")
    registry.set_status(0, "done")

    rows = registry.get_replicas(0)
    assert [r["replica"] for r in rows] == [0, 1]
    assert rows[0]["seed_key"] == "0,0"
    assert rows[1]["blowup_time"] is None

    stats = registry.get_stats()
    assert stats["done"] == 1 and stats["pending"] == 1
    assert (stats["replicas"], stats["blowups"]) == (2, 1)
    assert [c["id"] for c in registry.get_cells("pending")] == [1]


def test_re_adding_a_cell_resets_it(registry, tmp_path):
    registry.add_cell(0, 1.0, 10, tmp_path)
    registry.add_replica(0, 0, (0, 0), None, 10, "x")
    registry.set_status(0, "done")
    registry.add_cell(0, 1.0, 10, tmp_path)
    assert registry.get_cell(0)["status"] == "pending"
    assert registry.get_replicas(0) == []


def test_unknown_status(registry, tmp_path):
    registry.add_cell(0, 1.0, 10, tmp_path)
    with pytest.raises(RegistryError):
        registry.set_status(0, "exploded")


def test_missing_cell(registry):
    assert registry.get_cell(42) is None
