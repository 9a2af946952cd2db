"""
KS Lab - Initial Conditions
Samplers for exchangeable, pairwise-distinct initial particle clouds
"""

import copy
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np

from . import KSLabError
from ..ui.logger import get_logger

logger = get_logger(__name__)

# Smallest system the model is defined for
MIN_PARTICLES = 5
MAX_RESAMPLES = 100

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator]


class LawKind(str, Enum):
    GAUSSIAN_IID = "GaussianIID"
    UNIFORM_DISK_IID = "UniformDiskIID"
    ATOM_PLUS_JITTER = "AtomPlusJitter"
    FILE_ATOMS = "FileAtoms"


@dataclass
class InitialLaw:
    """
    Law of one initial particle, applied i.i.d.

    Params by kind:
        GaussianIID:    center (x, y), scale (std per coordinate, default 1)
        UniformDiskIID: center (x, y), radius
        AtomPlusJitter: atoms [[weight, x, y], ...], jitter (default 1/n)
        FileAtoms:      path to a "weight x y" table, jitter (default 1/n)
    """

    kind: LawKind
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        try:
            self.kind = LawKind(self.kind)
        except ValueError:
            raise InitialLawError(f"Unknown initial law kind: {self.kind!r}")
        self.params = copy.deepcopy(dict(self.params))
        self._validate()

    def _validate(self):
        p = self.params
        if "center" in p:
            center = np.asarray(p["center"], dtype=float)
            if center.shape != (2,) or not np.all(np.isfinite(center)):
                raise InitialLawError(f"center must be a finite planar point, got {p['center']!r}")

        if self.kind is LawKind.GAUSSIAN_IID:
            if float(p.get("scale", 1.0)) <= 0:
                raise InitialLawError("GaussianIID scale must be > 0")
        elif self.kind is LawKind.UNIFORM_DISK_IID:
            if float(p.get("radius", 0.0)) <= 0:
                raise InitialLawError("UniformDiskIID radius must be > 0")
        else:
            if "jitter" in p and float(p["jitter"]) <= 0:
                raise InitialLawError("jitter scale must be > 0")
            if self.kind is LawKind.ATOM_PLUS_JITTER:
                weights, _ = self._atom_table(p.get("atoms", [[1.0, 0.0, 0.0]]))
                if abs(weights.sum() - 1.0) > 1e-9:
                    raise InitialLawError(f"atom weights must sum to 1, got {weights.sum():.12g}")
            else:
                if "path" not in p:
                    raise InitialLawError("FileAtoms needs a path")

    @staticmethod
    def _atom_table(rows) -> Tuple[np.ndarray, np.ndarray]:
        table = np.asarray(rows, dtype=float)
        if table.ndim != 2 or table.shape[1] != 3 or table.shape[0] == 0:
            raise InitialLawError("atoms must be rows of (weight, x, y)")
        weights, points = table[:, 0], table[:, 1:]
        if np.any(weights < 0) or not np.all(np.isfinite(table)):
            raise InitialLawError("atom weights must be finite and nonnegative")
        return weights, points

    def atoms(self) -> Tuple[np.ndarray, np.ndarray]:
        """(weights, points) for atom laws, weights normalised"""
        if self.kind is LawKind.ATOM_PLUS_JITTER:
            weights, points = self._atom_table(self.params.get("atoms", [[1.0, 0.0, 0.0]]))
        elif self.kind is LawKind.FILE_ATOMS:
            weights, points = read_atom_file(self.params["path"])
        else:
            raise InitialLawError(f"{self.kind.value} has no atoms")
        return weights / weights.sum(), points

    @property
    def is_single_atom(self) -> bool:
        """True when the law puts all its mass on one point (a Dirac mass)"""
        if self.kind not in (LawKind.ATOM_PLUS_JITTER, LawKind.FILE_ATOMS):
            return False
        weights, _ = self.atoms()
        return bool(np.max(weights) >= 1.0 - 1e-12)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "params": copy.deepcopy(self.params)}


def read_atom_file(path: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray]:
    """Read a whitespace-separated "weight x y" table, one atom per line"""
    path = Path(path)
    rows: List[List[float]] = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 3:
                    raise InitialLawError(f"{path}:{lineno}: expected 'weight x y', got {line!r}")
                rows.append([float(v) for v in parts])
    except OSError as e:
        raise InitialLawError(f"Cannot read atom file {path}: {e}")
    except ValueError as e:
        raise InitialLawError(f"{path}: malformed number: {e}")

    weights, points = InitialLaw._atom_table(rows)
    if weights.sum() <= 0:
        raise InitialLawError(f"{path}: atom weights sum to zero")
    return weights / weights.sum(), points


def clamp_chi(p, n: int) -> np.ndarray:
    """chi_n: clamp each coordinate to [-n, n]; works on a point or an (N, 2) array"""
    return np.clip(np.asarray(p, dtype=np.float64), -float(n), float(n))


def _generator(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _draw(law: InitialLaw, n: int, rng: np.random.Generator) -> np.ndarray:
    p = law.params
    center = np.asarray(p.get("center", (0.0, 0.0)), dtype=float)

    if law.kind is LawKind.GAUSSIAN_IID:
        raw = center + float(p.get("scale", 1.0)) * rng.standard_normal((n, 2))
        return clamp_chi(raw, n)

    if law.kind is LawKind.UNIFORM_DISK_IID:
        radius = float(p["radius"])
        r = radius * np.sqrt(rng.random(n))
        angle = 2.0 * np.pi * rng.random(n)
        raw = center + np.column_stack((r * np.cos(angle), r * np.sin(angle)))
        return clamp_chi(raw, n)

    weights, points = law.atoms()
    choice = rng.choice(len(weights), size=n, p=weights)
    jitter = float(p.get("jitter", 1.0 / n))
    return clamp_chi(points[choice], n) + jitter * rng.standard_normal((n, 2))


def has_duplicates(points: np.ndarray) -> bool:
    """Exact (bitwise) duplicate detection among rows"""
    if points.shape[0] < 2:
        return False
    return np.unique(points, axis=0).shape[0] < points.shape[0]


def sample_initial(law: InitialLaw, n: int, seed: SeedLike) -> np.ndarray:
    """
    Sample n exchangeable, pairwise-distinct initial positions

    Args:
        law: Law of a single particle
        n: Number of particles (>= 5)
        seed: Integer seed, SeedSequence or Generator

    Returns:
        np.ndarray: (n, 2) positions
    """
    if n < MIN_PARTICLES:
        raise InitialLawError(f"Need at least {MIN_PARTICLES} particles, got {n}")

    rng = _generator(seed)
    for attempt in range(1, MAX_RESAMPLES + 1):
        points = _draw(law, n, rng)
        if not has_duplicates(points):
            return points
        logger.debug("initial.duplicate_resample", attempt=attempt)

    raise InitialLawError(f"Could not draw {n} distinct points in {MAX_RESAMPLES} attempts")


def sixth_moment(points: np.ndarray) -> float:
    """Empirical E|X|^6 of a sampled cloud (reported, never enforced)"""
    sq = np.einsum("ij,ij->i", points, points)
    return float(np.mean(sq ** 3))


class InitialLawError(KSLabError):
    """Invalid initial law parameters or sampling failure"""
    pass
