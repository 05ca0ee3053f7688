from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from app.batch import sweep
from app.batch.config_loader import parse_config
from app.batch.sweep import aggregate, histogram, load_records, run_sweep, verify_aggregates
from app.core.errors import TraceError

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def config():
    return parse_config(FIXTURES / "small_sweep.toml")


def _read(path: Path) -> bytes:
    return path.read_bytes()


def test_sweep_writes_records_and_aggregates(config, tmp_path):
    result = run_sweep(config, out_dir=tmp_path)

    assert len(result.records) + len(result.failures) == 4
    for name in ("records.csv", "timings.csv", "aggregates.csv", "histogram.csv", "histogram_rss.csv", "manifest.json"):
        assert (tmp_path / name).exists(), name

    records = load_records(tmp_path / "records.csv")
    empty = records[records["point_value"] == 0.0]
    # Without leaves only the direct path remains.
    assert len(empty) == 2
    assert (empty["n_mpcs"] == 1).all()
    assert (empty["drms_ns"] == 0.0).all()
    assert empty["pl_db"].tolist() == pytest.approx([100.05, 100.05], abs=0.01)


def test_histogram_rows_count_realizations(config, tmp_path):
    run_sweep(config, out_dir=tmp_path)
    records = load_records(tmp_path / "records.csv")
    hist = pd.read_csv(tmp_path / "histogram.csv")

    per_point = hist.groupby("point_value")["count"].sum()
    expected = records.groupby("point_value").size()
    assert per_point.to_dict() == expected.to_dict()
    assert len(hist) == config.histogram_bins * records["point_value"].nunique()


def test_sweep_is_deterministic(config, tmp_path):
    run_sweep(config, out_dir=tmp_path / "a")
    run_sweep(config, out_dir=tmp_path / "b")

    for name in ("records.csv", "aggregates.csv", "histogram.csv"):
        assert _read(tmp_path / "a" / name) == _read(tmp_path / "b" / name)


def test_interrupted_sweep_resumes_to_same_records(config, tmp_path):
    run_sweep(config, out_dir=tmp_path / "full")

    partial = tmp_path / "partial"
    run_sweep(config, out_dir=partial)
    lines = (partial / "records.csv").read_text(encoding="utf-8").splitlines(keepends=True)
    (partial / "records.csv").write_text("".join(lines[:3]), encoding="utf-8")

    result = run_sweep(config, out_dir=partial)

    assert len(result.records) + len(result.failures) == len(lines) - 3
    assert _read(partial / "records.csv") == _read(tmp_path / "full" / "records.csv")
    assert _read(partial / "aggregates.csv") == _read(tmp_path / "full" / "aggregates.csv")


def test_worker_count_does_not_change_records(config, tmp_path):
    run_sweep(config, out_dir=tmp_path / "serial", threads=1)
    run_sweep(config, out_dir=tmp_path / "pool", threads=2)

    assert _read(tmp_path / "serial" / "records.csv") == _read(tmp_path / "pool" / "records.csv")


def test_failed_realizations_are_logged_and_skipped(config, tmp_path, monkeypatch):
    real = sweep.realize

    def flaky(cfg, params, **kwargs):
        if params.rho > 0:
            raise TraceError("non-finite amplitude")
        return real(cfg, params, **kwargs)

    monkeypatch.setattr(sweep, "realize", flaky)
    result = run_sweep(config, out_dir=tmp_path)

    assert len(result.records) == 2
    assert len(result.failures) == 2
    failures = pd.read_csv(tmp_path / "failures.csv", dtype={"seed": str})
    assert failures["error"].tolist() == ["TraceError", "TraceError"]
    assert load_records(tmp_path / "records.csv")["point_value"].tolist() == [0.0, 0.0]


def test_profiles_are_written_when_requested(config, tmp_path):
    config = config.model_copy(update={"values": [0.0], "emit_pdps": True, "emit_cdfs": True})
    run_sweep(config, out_dir=tmp_path)

    pdp = pd.read_csv(tmp_path / "pdp_0.csv")
    cdf = pd.read_csv(tmp_path / "cdf_0.csv")
    assert list(pdp.columns) == ["delay_ns", "power_linear", "power_dbm"]
    assert cdf["probability"].iloc[-1] == 1.0


def test_per_realization_and_averaged_cdfs_are_written(config, tmp_path):
    config = config.model_copy(update={"values": [0.0], "emit_cdfs": True})
    run_sweep(config, out_dir=tmp_path)

    per_cir = pd.read_csv(tmp_path / "cdf_cir_0.csv")
    averaged = pd.read_csv(tmp_path / "cdf_avg_0.csv")
    assert list(per_cir.columns) == ["realization", "value_dbm", "probability"]
    assert sorted(per_cir["realization"].unique()) == list(range(config.realizations))
    for _, group in per_cir.groupby("realization"):
        assert group["value_dbm"].is_monotonic_increasing
        assert group["probability"].iloc[-1] == 1.0
    assert averaged["probability"].iloc[-1] == 1.0

    # Without leaves every realization has the same CIR, so the averaged PDP matches each one.
    first = per_cir[per_cir["realization"] == 0]
    assert np.allclose(averaged["value_dbm"].to_numpy(), first["value_dbm"].to_numpy())
    assert np.allclose(averaged["probability"].to_numpy(), first["probability"].to_numpy())


def test_unexpected_errors_are_recorded_as_failures(config, tmp_path, monkeypatch):
    real = sweep.realize

    def singular(cfg, params, **kwargs):
        if params.rho > 0:
            raise np.linalg.LinAlgError("Singular matrix")
        return real(cfg, params, **kwargs)

    monkeypatch.setattr(sweep, "realize", singular)
    result = run_sweep(config, out_dir=tmp_path)

    assert len(result.records) == 2
    assert [f.error for f in result.failures] == ["LinAlgError", "LinAlgError"]
    assert (tmp_path / "aggregates.csv").exists()


def test_aggregate_identical_records():
    records = pd.DataFrame(
        {"point_value": [0.5, 0.5], "drms_ns": [5.0, 5.0], "rss_dbm": [-80.0, -80.0], "pl_db": [80.0, 80.0]}
    )
    aggregates, hist = aggregate(records, 4, fspl_db=70.0)

    row = aggregates.iloc[0]
    assert row["std_drms_ns"] == 0.0
    assert row["mean_excess_loss_db"] == pytest.approx(10.0)
    assert hist["count"].tolist() == [2, 0, 0, 0]


def test_aggregate_mean_and_population_std():
    records = pd.DataFrame(
        {"point_value": [1.0, 1.0], "drms_ns": [2.0, 4.0], "rss_dbm": [-90.0, -70.0], "pl_db": [90.0, 70.0]}
    )
    aggregates, _ = aggregate(records, 2)

    row = aggregates.iloc[0]
    assert row["mean_drms_ns"] == pytest.approx(3.0)
    assert row["std_drms_ns"] == pytest.approx(1.0)
    assert row["mean_rss_dbm"] == pytest.approx(-80.0)
    assert "mean_excess_loss_db" not in aggregates.columns


def test_histogram_edges_are_shared_across_points():
    records = pd.DataFrame({"point_value": [0.0, 0.0, 1.0, 1.0], "drms_ns": [0.0, 1.0, 2.0, 4.0]})
    hist = histogram(records, 4)

    edges = hist.groupby("point_value")["bin_lo"].apply(list)
    assert edges[0.0] == edges[1.0] == [0.0, 1.0, 2.0, 3.0]
    assert hist[hist["point_value"] == 1.0]["count"].tolist() == [0, 0, 1, 1]


def test_verify_aggregates_detects_tampering(config, tmp_path):
    run_sweep(config, out_dir=tmp_path)
    assert verify_aggregates(config, tmp_path)

    path = tmp_path / "aggregates.csv"
    path.write_text(path.read_text(encoding="utf-8").replace("\n", "\n0", 1), encoding="utf-8")
    assert not verify_aggregates(config, tmp_path)
