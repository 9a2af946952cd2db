import numpy as np

from kslab.core.records import Event, EventKind, TrajectoryRecord

# Small subcritical cell: a handful of replicas over a short horizon
SMALL_RUN = {
    "model": {"theta": 1.0, "n": 6, "horizon": 0.05, "snapshot_interval": 0.01},
    "steps": {"dt_max": 1e-3},
    "initial": {"kind": "GaussianIID", "params": {"scale": 1.0}},
    "run": {"replicas": 3, "master_seed": 7, "workers": 1},
    "diagnostics": {"selection": ["phase", "centroid"]},
    "logging": {"enabled": False},
}


def static_record(positions, times, theta=1.0, blowup_time=None, events=()):
    """Record whose cloud never moves"""
    positions = np.asarray(positions, dtype=float)
    times = np.asarray(times, dtype=float)
    return TrajectoryRecord(
        theta=theta,
        n=positions.shape[0],
        horizon=float(times[-1]),
        times=times,
        positions=np.repeat(positions[None], len(times), axis=0),
        events=list(events),
        blowup_time=blowup_time,
    )


def collapse_record(n, tau, horizon=1.0, theta=2.0, ell=None):
    """Record with a single logged triple collapse at tau (None for a censored replica)"""
    ell = float(n * n if ell is None else ell)
    events = []
    if tau is not None:
        events.append(Event(tau, EventKind.CLUSTER_COLLAPSE, {"k": 3, "ell": ell, "cluster": [0, 1, 2]}))
    rng = np.random.default_rng(n)
    return static_record(rng.standard_normal((n, 2)), [0.0, horizon], theta, tau, events)
