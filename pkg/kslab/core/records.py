"""
KS Lab - Trajectory Records
Snapshots, event log and the on-disk replica format
"""

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from . import KSLabError
from ..ui.logger import get_logger

logger = get_logger(__name__)

SNAPSHOT_FILE = "snapshots.csv"
EVENTS_FILE = "events.jsonl"
RECORD_FILE = "record.json"


class EventKind(str, Enum):
    CLUSTER_COLLAPSE = "ClusterCollapse"
    TAMING_ACTIVATED = "TamingActivated"
    SUBSTEP_FLOOR_HIT = "SubstepFloorHit"


@dataclass(frozen=True)
class Event:
    t: float
    kind: EventKind
    payload: Any = None

    def to_dict(self) -> Dict[str, Any]:
        return {"t": self.t, "kind": self.kind.value, "payload": self.payload}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "Event":
        return cls(float(d["t"]), EventKind(d["kind"]), d.get("payload"))


@dataclass
class TrajectoryRecord:
    """One replica: snapshots on the output grid plus the event log"""

    theta: float
    n: int
    horizon: float
    times: np.ndarray
    positions: np.ndarray  # (S, N, 2)
    events: List[Event] = field(default_factory=list)
    blowup_time: Optional[float] = None
    steps: int = 0
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def blew_up(self) -> bool:
        return self.blowup_time is not None

    def active_slice(self) -> slice:
        """Snapshots up to and including the blow-up instant"""
        if self.blowup_time is None:
            return slice(0, len(self.times))
        return slice(0, int(np.searchsorted(self.times, self.blowup_time, side="right")))

    def pre_blowup(self) -> Tuple[np.ndarray, np.ndarray]:
        s = self.active_slice()
        return self.times[s], self.positions[s]

    def collapse_events(self) -> List[Event]:
        return [e for e in self.events if e.kind is EventKind.CLUSTER_COLLAPSE]

    def count(self, kind: EventKind) -> int:
        return sum(1 for e in self.events if e.kind is kind)

    # -- persistence -----------------------------------------------------

    def save(self, directory: Path) -> Dict[str, str]:
        """
        Write the replica to a directory

        Returns:
            Dict[str, str]: file name -> SHA-256 of its contents
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)

        s, n = self.positions.shape[0], self.positions.shape[1]
        table = np.column_stack((
            np.repeat(self.times, n),
            np.tile(np.arange(n), s),
            self.positions.reshape(s * n, 2),
        ))
        with open(directory / SNAPSHOT_FILE, "w", encoding="utf-8", newline="\n") as f:
            f.write("t,particle,x,y\n")
            np.savetxt(f, table, fmt=["%.17g", "%d", "%.17g", "%.17g"], delimiter=",")

        with open(directory / EVENTS_FILE, "w", encoding="utf-8", newline="\n") as f:
            for event in self.events:
                f.write(json.dumps(event.to_dict(), sort_keys=True) + "\n")

        header = {
            "theta": self.theta,
            "n": self.n,
            "horizon": self.horizon,
            "blowup_time": self.blowup_time,
            "steps": self.steps,
            "metadata": self.metadata,
        }
        with open(directory / RECORD_FILE, "w", encoding="utf-8", newline="\n") as f:
            json.dump(header, f, indent=2, sort_keys=True)
            f.write("\n")

        return {name: file_checksum(directory / name) for name in (SNAPSHOT_FILE, EVENTS_FILE, RECORD_FILE)}

    @classmethod
    def load(cls, directory: Path) -> "TrajectoryRecord":
        directory = Path(directory)
        try:
            with open(directory / RECORD_FILE, "r", encoding="utf-8") as f:
                header = json.load(f)
            table = np.loadtxt(directory / SNAPSHOT_FILE, delimiter=",", skiprows=1, ndmin=2)
            with open(directory / EVENTS_FILE, "r", encoding="utf-8") as f:
                events = [Event.from_dict(json.loads(line)) for line in f if line.strip()]
        except (OSError, ValueError, KeyError) as e:
            raise RecordError(f"Cannot load replica from {directory}: {e}")

        n = int(header["n"])
        if table.shape[0] % n:
            raise RecordError(f"{directory / SNAPSHOT_FILE}: row count not a multiple of n={n}")
        s = table.shape[0] // n
        times = table[::n, 0].copy()
        positions = table[:, 2:4].reshape(s, n, 2).copy()

        return cls(
            theta=float(header["theta"]),
            n=n,
            horizon=float(header["horizon"]),
            times=times,
            positions=positions,
            events=events,
            blowup_time=header.get("blowup_time"),
            steps=int(header.get("steps", 0)),
            metadata=header.get("metadata", {}),
        )


def file_checksum(path: Path) -> str:
    """SHA-256 of a file"""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def first_collapse_time(record: TrajectoryRecord, k: int, ell: float) -> Optional[float]:
    """Earliest logged collapse of a size-k cluster at threshold 1/ell, or None"""
    times = [
        e.t for e in record.collapse_events()
        if int(e.payload["k"]) == int(k) and float(e.payload["ell"]) == float(ell)
    ]
    return min(times) if times else None


class RecordError(KSLabError):
    """Malformed or missing replica artifacts"""
    pass
