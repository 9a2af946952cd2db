"""
KS Lab - Squared Bessel Reference
Euler simulation of squared Bessel processes of arbitrary real dimension
"""

import math
from dataclasses import dataclass
from typing import List, Sequence, Union

import numpy as np

from . import KSLabError
from .diagnostics import RSeries
from ..ui.logger import get_logger

logger = get_logger(__name__)

HIT_THRESHOLD = 1e-9
MIN_HITTING_REPLICAS = 100

SeedLike = Union[int, np.random.SeedSequence]


@dataclass(frozen=True)
class BesselConfig:
    """dZ = 2 sqrt(Z+) dW + dimension dt, Z_0 = z0, reflected (or absorbed) at 0"""

    dimension: float
    z0: float
    horizon: float
    dt: float = 1e-4
    absorb_at_zero: bool = False

    def __post_init__(self):
        if self.dimension < 0:
            raise BesselError(f"dimension must be >= 0, got {self.dimension}")
        if self.z0 < 0:
            raise BesselError(f"z0 must be >= 0, got {self.z0}")
        if not self.dt > 0:
            raise BesselError(f"dt must be > 0, got {self.dt}")
        if self.horizon < 0:
            raise BesselError(f"horizon must be >= 0, got {self.horizon}")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


def _euler_step(z: np.ndarray, absorbed: np.ndarray, config: BesselConfig, rng: np.random.Generator) -> np.ndarray:
    dw = math.sqrt(config.dt) * rng.standard_normal(z.shape)
    z = z + 2.0 * np.sqrt(np.maximum(z, 0.0)) * dw + config.dimension * config.dt
    z = np.maximum(z, 0.0)
    if config.absorb_at_zero:
        absorbed |= z <= HIT_THRESHOLD
        z[absorbed] = 0.0
    return z


def simulate_bessel_batch(
    config: BesselConfig,
    replicas: int,
    seed: SeedLike,
    record_every: int = 1,
) -> List[RSeries]:
    """
    Simulate independent paths sharing one time grid

    Args:
        config: Process parameters
        replicas: Number of paths
        seed: Integer or SeedSequence
        record_every: Keep every k-th Euler step (the final step is always kept)

    Returns:
        List[RSeries]: One nonnegative series per replica
    """
    if replicas < 1:
        raise BesselError(f"replicas must be >= 1, got {replicas}")
    if record_every < 1:
        raise BesselError(f"record_every must be >= 1, got {record_every}")

    rng = np.random.default_rng(seed)
    steps = config.n_steps
    keep = list(range(0, steps + 1, record_every))
    if keep[-1] != steps:
        keep.append(steps)

    z = np.full(replicas, float(config.z0))
    absorbed = np.zeros(replicas, dtype=bool)
    if config.absorb_at_zero:
        absorbed |= z <= HIT_THRESHOLD
        z[absorbed] = 0.0
    out = np.empty((len(keep), replicas))
    out[0] = z
    row = 1
    for k in range(1, steps + 1):
        z = _euler_step(z, absorbed, config, rng)
        if row < len(keep) and k == keep[row]:
            out[row] = z
            row += 1

    times = np.array(keep, dtype=float) * config.dt
    return [RSeries(times, out[:, r].copy(), False) for r in range(replicas)]


def simulate_bessel(config: BesselConfig, seed: SeedLike, record_every: int = 1) -> RSeries:
    """Single path; same stream as replica 0 of a one-replica batch"""
    return simulate_bessel_batch(config, 1, seed, record_every)[0]


def zero_hitting_fraction(
    config: BesselConfig,
    replicas: int,
    seed: SeedLike,
    threshold: float = HIT_THRESHOLD,
) -> float:
    """Fraction of paths that go below threshold before the horizon (paths are not stored)"""
    if replicas < MIN_HITTING_REPLICAS:
        raise BesselError(f"zero_hitting_fraction needs {MIN_HITTING_REPLICAS} replicas, got {replicas}")

    rng = np.random.default_rng(seed)
    z = np.full(replicas, float(config.z0))
    absorbed = np.zeros(replicas, dtype=bool)
    hit = z < threshold
    for _ in range(config.n_steps):
        z = _euler_step(z, absorbed, config, rng)
        hit |= z < threshold
    fraction = float(hit.mean())
    logger.debug("bessel.hitting", dimension=config.dimension, fraction=f"{fraction:.4f}", dt=config.dt)
    return fraction


def zero_hitting_table(
    configs: Sequence[BesselConfig],
    replicas: int,
    master_seed: int,
    threshold: float = HIT_THRESHOLD,
) -> List[float]:
    """zero_hitting_fraction per config, config i seeded with spawn key (i,)"""
    return [
        zero_hitting_fraction(c, replicas, np.random.SeedSequence(master_seed, spawn_key=(i,)), threshold)
        for i, c in enumerate(configs)
    ]


class BesselError(KSLabError):
    """Invalid squared Bessel configuration"""
    pass
