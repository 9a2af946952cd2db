import numpy as np
import pytest

from kslab.core.bessel import (
    BesselConfig,
    BesselError,
    simulate_bessel,
    simulate_bessel_batch,
    zero_hitting_fraction,
    zero_hitting_table,
)


@pytest.mark.parametrize("kwargs", [
    {"dimension": -1.0, "z0": 1.0, "horizon": 1.0},
    {"dimension": 1.0, "z0": -1.0, "horizon": 1.0},
    {"dimension": 1.0, "z0": 1.0, "horizon": -1.0},
    {"dimension": 1.0, "z0": 1.0, "horizon": 1.0, "dt": 0.0},
])
def test_config_validation(kwargs):
    with pytest.raises(BesselError):
        BesselConfig(**kwargs)


def test_batch_grid_and_sign():
    paths = simulate_bessel_batch(BesselConfig(1.0, 0.5, 1.0, 1e-3), 20, 0, record_every=30)
    assert len(paths) == 20
    times = paths[0].times
    assert times[0] == 0.0 and times[-1] == pytest.approx(1.0)
    assert np.allclose(np.diff(times)[:-1], 0.03)
    assert all(np.all(p.values >= 0.0) for p in paths)
    assert all(p.values[0] == 0.5 for p in paths)


def test_single_path_matches_batch_of_one():
    config = BesselConfig(2.0, 1.0, 0.5, 1e-3)
    assert np.array_equal(simulate_bessel(config, 4).values, simulate_bessel_batch(config, 1, 4)[0].values)


@pytest.mark.parametrize("seed,d", [(0, 2.0), (1, 3.0), (2, 8.0)])
def test_terminal_mean(seed, d):
    config = BesselConfig(d, 1.0, 1.0, 1e-3)
    paths = simulate_bessel_batch(config, 10000, seed, record_every=1000)
    mean = np.mean([p.values[-1] for p in paths])
    assert np.isclose(mean, 1.0 + d, rtol=0.06)


def test_zero_dimension_absorbed_paths_stay_at_zero():
    config = BesselConfig(0.0, 0.05, 1.0, 1e-3, absorb_at_zero=True)
    for path in simulate_bessel_batch(config, 50, 0):
        hits = np.flatnonzero(path.values == 0.0)
        if hits.size:
            assert np.all(path.values[hits[0]:] == 0.0)


def test_hitting_fraction_needs_replicas():
    with pytest.raises(BesselError):
        zero_hitting_fraction(BesselConfig(1.0, 1.0, 1.0), 10, 0)


def test_hitting_table_is_seeded():
    configs = [BesselConfig(0.0, 0.01, 0.5, 1e-3), BesselConfig(6.0, 1.0, 0.5, 1e-3)]
    first = zero_hitting_table(configs, 200, 9)
    assert first == zero_hitting_table(configs, 200, 9)
    assert first[0] > 0.9
    assert first[1] < 0.02


@pytest.mark.slow
def test_dimension_dichotomy():
    above = zero_hitting_fraction(BesselConfig(3.0, 1.0, 5.0, 1e-4), 500, 1)
    below = zero_hitting_fraction(BesselConfig(1.0, 1.0, 5.0, 1e-4), 500, 2)
    assert above <= 0.02
    assert below >= 0.5
