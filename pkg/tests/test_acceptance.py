import json

import pytest

from kslab.core.acceptance import (
    BARYCENTRE_TRIPLES,
    CRITERIA,
    EXPLOSION_REPLICAS,
    FAIL,
    NOT_APPLICABLE,
    PASS,
    PHASE_REPLICAS,
    SKIPPED,
    CellData,
    RunContext,
    VerificationError,
    check_barycentre,
    check_explosion_divergence,
    check_phase_classification,
    verify,
)
from kslab.core.records import SNAPSHOT_FILE
from kslab.core.runner import MANIFEST_FILE, SweepSpec, run_cell, run_sweep

from .helpers import collapse_record


def statuses(summary):
    return {r.name: r.status for r in summary.results}


@pytest.fixture
def small_run(make_config):
    return run_cell(make_config(), show_progress=False).directory


def test_every_criterion_is_registered():
    names = [name for name, _ in CRITERIA]
    assert len(names) == len(set(names))
    assert {"integrity", "determinism", "dispersion_drift", "dimension_combinatorics",
            "barycentre_inequality", "bessel_dichotomy"} <= set(names)


def test_small_run_passes(small_run):
    summary = verify(small_run)
    result = statuses(summary)
    assert summary.passed
    assert result["integrity"] == PASS
    assert result["determinism"] == PASS
    assert result["dimension_combinatorics"] == PASS
    assert result["dispersion_drift"] == NOT_APPLICABLE
    assert result["barycentre_inequality"] == SKIPPED
    assert summary.to_dict()["passed"] is True


def test_tampered_snapshot_fails_integrity(small_run):
    path = small_run / "replica_0001" / SNAPSHOT_FILE
    lines = path.read_text(encoding="utf-8").splitlines()
    lines[-1] = lines[-1].rsplit(",", 1)[0] + ",123.5"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    summary = verify(small_run, resimulate=False)
    result = statuses(summary)
    assert not summary.passed
    assert result["integrity"] == FAIL
    assert result["determinism"] == SKIPPED


def test_wrong_manifest_digest_fails_determinism(small_run):
    manifest_path = small_run / MANIFEST_FILE
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    manifest[f"replica_0000/{SNAPSHOT_FILE}"] = "0" * 64
    manifest_path.write_text(json.dumps(manifest), encoding="utf-8")
    result = statuses(verify(small_run))
    assert result["determinism"] == FAIL
    assert result["integrity"] == FAIL


def test_sweep_directory_is_verified_cell_by_cell(make_config, tmp_path):
    run_sweep(SweepSpec(make_config(), [1.0], [5, 6]), tmp_path / "sweep", show_progress=False)
    summary = verify(tmp_path / "sweep", resimulate=False)
    integrity = next(r for r in summary.results if r.name == "integrity")
    assert integrity.status == PASS
    assert "cell_0000" in integrity.detail and "cell_0001" in integrity.detail


def test_empty_directory(tmp_path):
    with pytest.raises(VerificationError):
        verify(tmp_path)
    with pytest.raises(VerificationError):
        verify(tmp_path / "missing")


def context(tmp_path, cells):
    return RunContext(tmp_path, [CellData(tmp_path / name, {}, config, records) for name, config, records in cells])


def explosion_context(make_config, tmp_path, ell="N^2", at_start=0):
    cells = []
    for n, spacing in ((5, 0.01), (6, 0.02)):
        config = make_config("model.theta=2.0", f"model.n={n}", f"detectors=[{{k=3, ell='{ell}'}}]", output=f"n{n}")
        taus = [spacing * (i + 1) for i in range(EXPLOSION_REPLICAS)]
        if n == 5:
            taus[:at_start] = [0.0] * at_start
        cells.append((f"n{n}", config, [collapse_record(n, t, ell=config.detectors[0].ell) for t in taus]))
    return context(tmp_path, cells)


def test_explosion_divergence_passes_on_growing_times(make_config, tmp_path):
    result = check_explosion_divergence(explosion_context(make_config, tmp_path))
    assert result.status == PASS
    assert result.values["2"]["fired_at_start"] is False


def test_explosion_divergence_fails_on_collapse_at_start(make_config, tmp_path):
    result = check_explosion_divergence(explosion_context(make_config, tmp_path, at_start=3))
    assert result.status == FAIL
    assert "collapsed at t=0 {5: 3}" in result.detail


def test_explosion_divergence_needs_n_squared_detector(make_config, tmp_path):
    result = check_explosion_divergence(explosion_context(make_config, tmp_path, ell="N"))
    assert result.status == NOT_APPLICABLE


def phase_context(make_config, tmp_path, theta, horizon, taus):
    config = make_config(f"model.theta={theta}", "model.n=10", f"model.horizon={horizon}")
    records = [collapse_record(10, t, horizon=horizon, theta=theta, ell=1e6) for t in taus]
    return context(tmp_path, [("cell", config, records)])


def test_phase_uses_supercritical_window(make_config, tmp_path):
    taus = [1.0] * (PHASE_REPLICAS - 1) + [19.0]
    result = check_phase_classification(phase_context(make_config, tmp_path, 3.0, 20.0, taus))
    assert result.status == PASS
    assert result.values["cell"]["before"] == 20.0
    assert result.values["cell"]["collapse_fraction"] == 1.0


def test_phase_uses_subcritical_window(make_config, tmp_path):
    # collapses after T=5 do not count against a subcritical cell
    late = [None] * (PHASE_REPLICAS - 10) + [7.0] * 10
    assert check_phase_classification(phase_context(make_config, tmp_path, 1.0, 10.0, late)).status == PASS
    early = [None] * (PHASE_REPLICAS - 3) + [4.0] * 3
    assert check_phase_classification(phase_context(make_config, tmp_path, 1.0, 10.0, early)).status == FAIL


@pytest.mark.parametrize("theta,horizon", [(3.0, 1.0), (1.0, 2.0)])
def test_phase_skips_short_horizon(make_config, tmp_path, theta, horizon):
    taus = [0.5] * PHASE_REPLICAS if theta > 2 else [None] * PHASE_REPLICAS
    result = check_phase_classification(phase_context(make_config, tmp_path, theta, horizon, taus))
    assert result.status == NOT_APPLICABLE


def test_barycentre_criterion_covers_full_triple_count(tmp_path):
    result = check_barycentre(RunContext(tmp_path, [], oracles=True))
    assert result.status == PASS
    assert result.detail.startswith(f"{BARYCENTRE_TRIPLES} triples x 4 function pairs")
    assert BARYCENTRE_TRIPLES == 100_000
    assert "L(r^2)" in result.detail and ": 0 violations" in result.detail


@pytest.mark.slow
def test_oracles_pass(small_run):
    result = statuses(verify(small_run, resimulate=False, oracles=True))
    assert result["barycentre_inequality"] == PASS
    assert result["bessel_dichotomy"] == PASS
    assert result["qv_oracle"] == PASS


@pytest.mark.slow
def test_subcritical_dispersion_identities(make_config):
    config = make_config("model.horizon=0.5", "model.n=10", "run.replicas=1000", "run.workers=0",
                         "diagnostics.selection=['phase']")
    root = run_cell(config, show_progress=False).directory
    result = statuses(verify(root, resimulate=False))
    assert result["dispersion_drift"] == PASS
    assert result["qv_rate"] == PASS
    assert result["centroid"] == PASS


@pytest.mark.slow
@pytest.mark.parametrize("theta,horizon", [(3.0, 20.0), (1.0, 5.0)])
def test_phase_classification_on_simulated_cell(make_config, theta, horizon):
    config = make_config(f"model.theta={theta}", "model.n=10", f"model.horizon={horizon}",
                         "model.snapshot_interval=0.5", f"run.replicas={PHASE_REPLICAS}", "run.workers=0",
                         "diagnostics.selection=['phase']")
    root = run_cell(config, show_progress=False).directory
    result = next(r for r in verify(root, resimulate=False).results if r.name == "phase_classification")
    assert result.status == PASS
    assert result.values[root.name]["before"] == horizon


@pytest.mark.slow
def test_centroid_diffuses_at_rate_two_over_n(make_config):
    config = make_config("model.theta=1.5", "model.n=12", "model.horizon=0.5", "model.snapshot_interval=0.05",
                         "run.replicas=1000", "run.workers=0", "diagnostics.selection=['centroid']")
    root = run_cell(config, show_progress=False).directory
    result = next(r for r in verify(root, resimulate=False).results if r.name == "centroid")
    assert result.status == PASS
    assert result.values[root.name]["target"] == pytest.approx(2.0 * 0.5 / 12)
