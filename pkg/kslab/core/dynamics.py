"""
KS Lab - Particle Dynamics
Tamed adaptive Euler-Maruyama for the N-particle Keller-Segel system
"""

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, List, Optional, Sequence, Tuple

import numpy as np
from numba import njit
from scipy.spatial import cKDTree

from . import KSLabError
from .geometry import ClusterIndexSet, as_positions, min_cluster_dispersion
from .initializers import InitialLaw, sample_initial, sixth_moment
from .records import Event, EventKind, TrajectoryRecord
from ..ui.logger import get_logger

if TYPE_CHECKING:
    from .config import SimConfig

logger = get_logger(__name__)

Observer = Callable[["ParticleState", List[Event]], None]


@dataclass
class ParticleState:
    t: float
    positions: np.ndarray
    alive: bool = True


@dataclass(frozen=True)
class StepPolicy:
    """
    Step-size policy.

    dt is bounded by dt_max and by calibration * (min pair distance)^proximity_exponent;
    the drift displacement of a particle never exceeds taming_cap times the
    distance to its nearest neighbour.
    """

    dt_max: float = 1e-3
    proximity_exponent: float = 2.0
    taming_cap: float = 0.25
    substep_floor: Optional[float] = None
    calibration: float = 0.05

    def __post_init__(self):
        if self.substep_floor is None:
            object.__setattr__(self, "substep_floor", 1e-12 * self.dt_max)
        if not self.dt_max > self.substep_floor > 0:
            raise SimulationError(
                f"Need dt_max > substep_floor > 0, got dt_max={self.dt_max}, floor={self.substep_floor}"
            )
        if not 0.0 < self.taming_cap < 1.0:
            raise SimulationError(f"taming_cap must lie in (0, 1), got {self.taming_cap}")
        if self.calibration <= 0:
            raise SimulationError(f"calibration must be > 0, got {self.calibration}")


@dataclass(frozen=True)
class CollapseDetector:
    """Fires when some size-k cluster has dispersion <= 1/ell"""

    k: int
    ell: float

    def __post_init__(self):
        if self.k < 2:
            raise SimulationError(f"Detector cluster size must be >= 2, got {self.k}")
        if self.ell < 1:
            raise SimulationError(f"Detector threshold index must be >= 1, got {self.ell}")

    @property
    def threshold(self) -> float:
        return 1.0 / self.ell

    @property
    def pair_bound_sq(self) -> float:
        """R_K <= 1/ell forces some pair in K within this squared distance"""
        return 2.0 / ((self.k - 1) * self.ell)


# -- noise sources ----------------------------------------------------------

class GeneratorNoise:
    """Independent N(0, dt) increments from a numpy Generator"""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def increment(self, t: float, dt: float, shape: Tuple[int, ...]) -> np.ndarray:
        return math.sqrt(dt) * self.rng.standard_normal(shape)


class MirroredNoise:
    """Wraps a noise source and flips the sign of selected coordinates"""

    def __init__(self, inner, signs=(1.0, -1.0)):
        self.inner = inner
        self.signs = np.asarray(signs, dtype=np.float64)

    def increment(self, t: float, dt: float, shape: Tuple[int, ...]) -> np.ndarray:
        return self.inner.increment(t, dt, shape) * self.signs


class GridBrownianPath:
    """
    Brownian path pre-sampled on a uniform grid.

    Increments are exact for steps that start and end on grid points, so two
    runs with different dt_max (both multiples of the grid spacing) see the
    same Brownian motion.
    """

    def __init__(self, spacing: float, horizon: float, n: int, rng: np.random.Generator):
        self.spacing = spacing
        steps = int(round(horizon / spacing))
        incr = math.sqrt(spacing) * rng.standard_normal((steps, n, 2))
        self.path = np.concatenate((np.zeros((1, n, 2)), np.cumsum(incr, axis=0)))

    def _index(self, t: float) -> int:
        i = int(round(t / self.spacing))
        if abs(i * self.spacing - t) > 1e-9 * self.spacing * max(1, i):
            raise SimulationError(f"Time {t} is not on the Brownian grid (spacing {self.spacing})")
        return i

    def increment(self, t: float, dt: float, shape: Tuple[int, ...]) -> np.ndarray:
        return self.path[self._index(t + dt)] - self.path[self._index(t)]


# -- drift ------------------------------------------------------------------

@njit(cache=True)
def _drift_kernel(pos, theta):
    n = pos.shape[0]
    acc = np.zeros((n, 2))
    comp = np.zeros((n, 2))
    nearest = np.full(n, np.inf)
    for i in range(n):
        xi = pos[i, 0]
        yi = pos[i, 1]
        for j in range(i + 1, n):
            dx = xi - pos[j, 0]
            dy = yi - pos[j, 1]
            r2 = dx * dx + dy * dy
            if r2 < nearest[i]:
                nearest[i] = r2
            if r2 < nearest[j]:
                nearest[j] = r2
            if r2 == 0.0:
                continue
            kx = -dx / r2
            ky = -dy / r2
            # i receives K(x_i - x_j), j receives K(x_j - x_i) = -K(x_i - x_j); Kahan sums
            y = kx - comp[i, 0]
            s = acc[i, 0] + y
            comp[i, 0] = (s - acc[i, 0]) - y
            acc[i, 0] = s
            y = ky - comp[i, 1]
            s = acc[i, 1] + y
            comp[i, 1] = (s - acc[i, 1]) - y
            acc[i, 1] = s
            y = -kx - comp[j, 0]
            s = acc[j, 0] + y
            comp[j, 0] = (s - acc[j, 0]) - y
            acc[j, 0] = s
            y = -ky - comp[j, 1]
            s = acc[j, 1] + y
            comp[j, 1] = (s - acc[j, 1]) - y
            acc[j, 1] = s
    scale = theta / n
    for i in range(n):
        acc[i, 0] *= scale
        acc[i, 1] *= scale
    return acc, nearest


def drift_and_nearest(positions, theta: float) -> Tuple[np.ndarray, np.ndarray]:
    """Total drift and each particle's squared distance to its nearest neighbour"""
    pos = np.ascontiguousarray(as_positions(positions))
    return _drift_kernel(pos, float(theta))


def total_drift(positions, theta: float) -> np.ndarray:
    """b_i = (theta/N) sum_j K(x_i - x_j) for every particle"""
    drift, _ = drift_and_nearest(positions, theta)
    return drift


# -- stepping ---------------------------------------------------------------

def step(
    state: ParticleState,
    policy: StepPolicy,
    theta: float,
    noise,
    max_dt: Optional[float] = None,
    forces: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    pass_floor: bool = False,
) -> Tuple[ParticleState, List[Event]]:
    """
    Advance one adaptive, tamed Euler-Maruyama step

    Args:
        state: Current (alive) state
        policy: Step-size policy
        theta: Attraction strength
        noise: Object with increment(t, dt, shape)
        max_dt: Extra upper bound on dt (e.g. distance to the next snapshot)
        forces: (drift, nearest_sq) already computed at state.positions
        pass_floor: Step with dt = substep_floor instead of raising SubstepFloorError

    Returns:
        Tuple[ParticleState, List[Event]]: New state and events raised by the step
    """
    if not state.alive:
        raise SimulationError("Cannot step a state that has blown up")

    pos = state.positions
    if forces is None:
        forces = drift_and_nearest(pos, theta)
    drift, nearest_sq = forces
    d_min = math.sqrt(float(nearest_sq.min()))

    events: List[Event] = []
    dt_prox = policy.calibration * d_min ** policy.proximity_exponent
    if dt_prox < policy.substep_floor:
        if not pass_floor:
            raise SubstepFloorError(state.t, d_min)
        events.append(Event(state.t, EventKind.SUBSTEP_FLOOR_HIT, d_min))
        dt_prox = policy.substep_floor

    dt = min(policy.dt_max, dt_prox)
    if max_dt is not None:
        dt = min(dt, max_dt)

    disp = drift * dt
    if theta != 0.0:
        cap = policy.taming_cap * np.sqrt(nearest_sq)
        size = np.hypot(disp[:, 0], disp[:, 1])
        tamed = size > cap
        if tamed.any():
            disp[tamed] *= (cap[tamed] / size[tamed])[:, None]
            events.append(Event(state.t, EventKind.TAMING_ACTIVATED, int(tamed.sum())))

    new_pos = pos + disp + noise.increment(state.t, dt, pos.shape)
    return ParticleState(state.t + dt, new_pos, True), events


class DetectorBank:
    """Evaluates collapse detectors after every accepted step"""

    def __init__(self, detectors: Sequence[CollapseDetector], n: int):
        self.detectors = sorted(set(detectors), key=lambda d: (d.k, d.ell))
        for d in self.detectors:
            if d.k > n:
                raise SimulationError(f"Detector size k={d.k} exceeds N={n}")
        self.fired = {}
        triple = [d for d in self.detectors if d.k == 3]
        self.terminal = max(triple, key=lambda d: d.ell) if triple else None

    def evaluate(self, t: float, positions: np.ndarray, nearest_sq: np.ndarray, dt: float) -> List[Event]:
        events: List[Event] = []
        pending = [d for d in self.detectors if d not in self.fired]
        if not pending:
            return events

        n = positions.shape[0]
        closest = float(nearest_sq.min())
        tree = None
        best = {}
        for d in pending:
            if closest > d.pair_bound_sq:
                continue
            if d.k not in best:
                if d.k == 2:
                    i = int(np.argmin(nearest_sq))
                    gap = positions - positions[i]
                    sq = np.einsum("ij,ij->i", gap, gap)
                    sq[i] = np.inf
                    best[2] = (0.5 * closest, ClusterIndexSet.of((i, int(np.argmin(sq)))))
                else:
                    if tree is None and d.k < n:
                        tree = cKDTree(positions)
                    best[d.k] = min_cluster_dispersion(positions, d.k, tree)
            value, cluster = best[d.k]
            if value <= d.threshold:
                self.fired[d] = t
                events.append(Event(t, EventKind.CLUSTER_COLLAPSE, {
                    "k": d.k,
                    "ell": float(d.ell),
                    "cluster": list(cluster.indices),
                    "dispersion": float(value),
                    "dt": float(dt),
                }))
        return events

    @property
    def blown_up(self) -> bool:
        return self.terminal is not None and self.terminal in self.fired


def _child_seed(seed: np.random.SeedSequence, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + (index,))


def simulate(
    config: "SimConfig",
    law: InitialLaw,
    detectors: Sequence[CollapseDetector],
    observers: Sequence[Observer] = (),
    seed: Optional[np.random.SeedSequence] = None,
    initial_positions: Optional[np.ndarray] = None,
    noise=None,
) -> TrajectoryRecord:
    """
    Run one replica up to the horizon or the terminal k=3 collapse

    Args:
        config: Simulation parameters (theta, n, horizon, steps, snapshot_interval)
        law: Initial law (ignored when initial_positions is given)
        detectors: Collapse detectors evaluated after every accepted step
        observers: Callables observer(state, events) run on every accepted step
        seed: Replica seed; child 0 draws the initial cloud, child 1 the noise
        initial_positions: Explicit starting cloud
        noise: Explicit noise source

    Returns:
        TrajectoryRecord: Snapshots every snapshot_interval (frozen after blow-up)
    """
    if seed is None:
        seed = np.random.SeedSequence(0)
    theta, n, horizon = float(config.theta), int(config.n), float(config.horizon)
    interval = float(config.snapshot_interval)
    policy = config.steps

    if initial_positions is None:
        positions = sample_initial(law, n, np.random.default_rng(_child_seed(seed, 0)))
    else:
        positions = np.array(as_positions(initial_positions), dtype=np.float64)
        if positions.shape[0] != n:
            raise SimulationError(f"Initial cloud has {positions.shape[0]} particles, config says {n}")
    if noise is None:
        noise = GeneratorNoise(np.random.default_rng(_child_seed(seed, 1)))

    bank = DetectorBank(detectors, n)
    state = ParticleState(0.0, positions)
    times = [0.0]
    snaps = [positions.copy()]
    events: List[Event] = []
    steps = 0
    blowup_time = None

    forces = drift_and_nearest(positions, theta)
    events.extend(bank.evaluate(0.0, positions, forces[1], 0.0))
    if bank.blown_up:
        state.alive = False
        blowup_time = 0.0

    n_snaps = int(math.floor(horizon / interval + 1e-9)) if horizon > 0 else 0
    grid = [min(k * interval, horizon) for k in range(1, n_snaps + 1)]
    if horizon > 0 and (not grid or grid[-1] < horizon):
        grid.append(horizon)

    target = 0
    floor_steps = 0
    on_floor = False
    while state.alive and target < len(grid):
        t_next = grid[target]
        new_state, step_events = step(state, policy, theta, noise, max_dt=t_next - state.t,
                                      forces=forces, pass_floor=True)
        floor_hit = [e for e in step_events if e.kind is EventKind.SUBSTEP_FLOOR_HIT]
        if floor_hit:
            floor_steps += 1
            if on_floor:
                # one event per run of consecutive floor steps
                step_events = [e for e in step_events if e.kind is not EventKind.SUBSTEP_FLOOR_HIT]
            else:
                logger.debug("dynamics.substep_floor", t=f"{state.t:.6g}", distance=f"{floor_hit[0].payload:.3g}")
        on_floor = bool(floor_hit)

        dt = new_state.t - state.t
        if new_state.t >= t_next - 1e-12 * max(1.0, t_next):
            new_state.t = t_next
        state = new_state
        steps += 1

        if not np.all(np.isfinite(state.positions)):
            raise SimulationError(f"Non-finite positions at t={state.t}")

        forces = drift_and_nearest(state.positions, theta)
        step_events += bank.evaluate(state.t, state.positions, forces[1], dt)
        events.extend(step_events)
        for observer in observers:
            observer(state, step_events)

        if bank.blown_up:
            state.alive = False
            blowup_time = state.t
            times.append(state.t)
            snaps.append(state.positions.copy())
            logger.info("dynamics.blowup", t=f"{state.t:.6g}", n=n, theta=theta)
        elif state.t == t_next:
            times.append(state.t)
            snaps.append(state.positions.copy())
            target += 1

    # frozen tail after blow-up
    for t_out in grid[target:]:
        if t_out > times[-1]:
            times.append(t_out)
            snaps.append(state.positions.copy())

    metadata = {
        "sixth_moment": sixth_moment(snaps[0]),
        "seed_key": [int(v) for v in seed.spawn_key],
        "detectors": [[d.k, float(d.ell)] for d in bank.detectors],
        "law": law.to_dict() if law is not None else None,
        "single_atom": bool(law is not None and initial_positions is None and law.is_single_atom),
        "taming_events": sum(1 for e in events if e.kind is EventKind.TAMING_ACTIVATED),
        "floor_steps": floor_steps,
    }
    return TrajectoryRecord(
        theta=theta,
        n=n,
        horizon=horizon,
        times=np.asarray(times),
        positions=np.stack(snaps),
        events=events,
        blowup_time=blowup_time,
        steps=steps,
        metadata=metadata,
    )


class SimulationError(KSLabError):
    """Invalid dynamics input or a failed integration"""
    pass


class SubstepFloorError(SimulationError):
    """The proximity-limited step fell below the substep floor"""

    def __init__(self, t: float, distance: float):
        super().__init__(f"Substep floor reached at t={t:.6g} (min pair distance {distance:.3g})")
        self.t = t
        self.distance = distance
