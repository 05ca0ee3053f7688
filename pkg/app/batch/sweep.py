"""Seeded multi-realization sweeps over crown density or volume."""

from __future__ import annotations

import json
import logging
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
import pandas as pd

from app import __version__
from app.batch.realization import FLOAT_FORMAT, realize
from app.core.errors import ChannelError, EmptyInputError
from app.core.rng import derive_seed
from app.schemas.channel import ChannelImpulseResponse, PowerDelayProfile
from app.schemas.foliage_schema import SweepConfig
from app.schemas.sweep_result import RECORD_COLUMNS, SweepFailure, SweepRecord, SweepResult
from app.services import channel_stats
from app.services.ray_engine import free_space_path_loss_db

logger = logging.getLogger(__name__)

__all__ = [
    "RECORDS_FILE",
    "run_sweep",
    "aggregate",
    "histogram",
    "load_records",
    "verify_aggregates",
    "write_aggregates",
]

RECORDS_FILE = "records.csv"
TIMINGS_FILE = "timings.csv"
FAILURES_FILE = "failures.csv"
AGGREGATES_FILE = "aggregates.csv"
HISTOGRAM_FILE = "histogram.csv"
HISTOGRAM_RSS_FILE = "histogram_rss.csv"
MANIFEST_FILE = "manifest.json"


def point_label(value: float) -> str:
    return f"{value:.9g}"


def _key(point_value: float, realization: int) -> tuple[str, int]:
    return point_label(point_value), int(realization)


def _job(args: tuple) -> tuple[object, Optional[ChannelImpulseResponse]]:
    """One realization; runs in a worker process. Errors come back as a SweepFailure."""
    config, value, realization, keep_cir, chunk = args
    seed = derive_seed(config.global_seed, value, realization)
    start_ts = time.perf_counter()
    try:
        params = config.params_at(value, seed=seed)
        run = realize(config, params, threads=1, chunk=chunk)
        summary = channel_stats.summarize(run.mpcs, config.channel)
        cir = None
        if keep_cir:
            cir = channel_stats.shape_cir(run.mpcs, config.channel.bandwidth_hz, config.channel.oversample)
    except Exception as exc:  # noqa: BLE001
        logger.exception("realization failed", extra={"point": value, "realization": realization, "seed": seed})
        return SweepFailure(value, realization, seed, type(exc).__name__, str(exc)), None
    record = SweepRecord(
        point_value=value,
        realization=realization,
        seed=seed,
        rss_dbm=summary["rss_dbm"],
        pl_db=summary["pl_db"],
        drms_ns=summary["drms_ns"],
        n_mpcs=summary["n_mpcs"],
        wall_time_s=time.perf_counter() - start_ts,
    )
    return record, cir


def _ordered_results(jobs: list[tuple], threads: int) -> Iterator[tuple[object, Optional[ChannelImpulseResponse]]]:
    if threads <= 1 or len(jobs) <= 1:
        for job in jobs:
            yield _job(job)
        return
    with ProcessPoolExecutor(max_workers=threads) as pool:
        # map() yields in submission order, which fixes the writer order.
        yield from pool.map(_job, jobs)


def load_records(path: Path) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"seed": str})
    missing = [c for c in RECORD_COLUMNS if c not in frame.columns]
    if missing:
        raise EmptyInputError(f"{path} lacks columns {missing}")
    return frame[RECORD_COLUMNS]


def _records_row(record: SweepRecord) -> dict:
    row = {c: getattr(record, c) for c in RECORD_COLUMNS}
    row["seed"] = str(record.seed)
    return row


def _append_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    frame = pd.DataFrame(rows, columns=columns)
    frame.to_csv(path, mode="a", header=not path.exists(), index=False, float_format=FLOAT_FORMAT)


def _sorted_records(frame: pd.DataFrame) -> pd.DataFrame:
    frame = frame.assign(_p=frame["point_value"].astype(float), _r=frame["realization"].astype(int))
    frame = frame.drop_duplicates(subset=["_p", "_r"], keep="last")
    return frame.sort_values(["_p", "_r"], kind="mergesort").drop(columns=["_p", "_r"]).reset_index(drop=True)


def _write_frame(path: Path, frame: pd.DataFrame) -> None:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def histogram(records: pd.DataFrame, n_bins: int, metric: str = "drms_ns") -> pd.DataFrame:
    """
    Occurrence matrix in long form (point_value, bin_lo, bin_hi, count).

    Bin edges span the metric's observed range over all points, so rows of
    different points line up as a heatmap.
    """
    if records.empty:
        raise EmptyInputError("no records to bin")
    values = records[metric].astype(float).to_numpy()
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, n_bins + 1)
    rows = []
    for point, group in records.groupby("point_value", sort=True):
        counts, _ = np.histogram(group[metric].astype(float).to_numpy(), bins=edges)
        for b in range(n_bins):
            rows.append({"point_value": point, "bin_lo": edges[b], "bin_hi": edges[b + 1], "count": int(counts[b])})
    return pd.DataFrame(rows, columns=["point_value", "bin_lo", "bin_hi", "count"])


def aggregate(
    records: pd.DataFrame,
    n_bins: int,
    *,
    fspl_db: Optional[float] = None,
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Per-point mean/std of D_RMS and RSS (population std) plus the D_RMS histogram."""
    if records.empty:
        raise EmptyInputError("no records to aggregate")
    rows = []
    for point, group in records.groupby("point_value", sort=True):
        drms = group["drms_ns"].astype(float).to_numpy()
        rss = group["rss_dbm"].astype(float).to_numpy()
        pl = group["pl_db"].astype(float).to_numpy()
        row = {
            "point_value": point,
            "n": len(group),
            "mean_drms_ns": float(drms.mean()),
            "std_drms_ns": float(drms.std()),
            "mean_rss_dbm": float(rss.mean()),
            "std_rss_dbm": float(rss.std()),
            "mean_pl_db": float(pl.mean()),
        }
        if fspl_db is not None:
            row["mean_excess_loss_db"] = float(pl.mean()) - fspl_db
        rows.append(row)
    return pd.DataFrame(rows), histogram(records, n_bins)


def _fspl(config: SweepConfig) -> float:
    tx = np.asarray(config.geometry.tx)
    rx = np.asarray(config.geometry.rx)
    return free_space_path_loss_db(float(np.linalg.norm(rx - tx)), config.geometry.carrier_hz)


def write_aggregates(config: SweepConfig, records: pd.DataFrame, out_dir: Path) -> tuple[pd.DataFrame, pd.DataFrame]:
    aggregates, hist = aggregate(records, config.histogram_bins, fspl_db=_fspl(config))
    _write_frame(out_dir / AGGREGATES_FILE, aggregates)
    _write_frame(out_dir / HISTOGRAM_FILE, hist)
    _write_frame(out_dir / HISTOGRAM_RSS_FILE, histogram(records, config.histogram_bins, metric="rss_dbm"))
    return aggregates, hist


def verify_aggregates(config: SweepConfig, out_dir: Path) -> bool:
    """Recompute aggregates from records.csv and compare with the emitted file byte for byte."""
    emitted = out_dir / AGGREGATES_FILE
    if not emitted.exists():
        return True
    records = load_records(out_dir / RECORDS_FILE)
    aggregates, _ = aggregate(records, config.histogram_bins, fspl_db=_fspl(config))
    return aggregates.to_csv(index=False, float_format=FLOAT_FORMAT) == emitted.read_text(encoding="utf-8")


def _write_profiles(config: SweepConfig, out_dir: Path, cirs: dict[str, list], complete: set[str]) -> None:
    for label, items in cirs.items():
        if label not in complete:
            logger.warning("point resumed; profiles skipped", extra={"point": label})
            continue
        items = sorted(items, key=lambda item: item[0])
        pdp = channel_stats.average_pdp([cir for _, cir in items])
        if config.emit_pdps:
            _write_frame(out_dir / f"pdp_{label}.csv", channel_stats.pdp_to_frame(pdp))
        if config.emit_cdfs:
            _write_cdfs(config, out_dir, label, items, pdp)


def _write_cdfs(
    config: SweepConfig,
    out_dir: Path,
    label: str,
    items: list[tuple[int, ChannelImpulseResponse]],
    pdp: PowerDelayProfile,
) -> None:
    """
    Three CDF files per point, all over gated per-bin powers in dBm:

    - ``cdf_<point>.csv``: bins of every realization pooled
    - ``cdf_cir_<point>.csv``: one CDF per realization, long form with a ``realization`` column
    - ``cdf_avg_<point>.csv``: bins of the point's averaged PDP
    """
    threshold_db = config.channel.threshold_db
    try:
        per_cir = [(r, channel_stats.gated_power_dbm(cir.power(), threshold_db)) for r, cir in items]
        averaged = channel_stats.gated_power_dbm(pdp.power, threshold_db)
    except ChannelError:
        logger.warning("no power for CDF", extra={"point": label})
        return

    pooled = channel_stats.empirical_cdf(np.concatenate([values for _, values in per_cir]))
    _write_frame(out_dir / f"cdf_{label}.csv", channel_stats.cdf_to_frame(pooled))

    frames = []
    for realization, values in per_cir:
        frame = channel_stats.cdf_to_frame(channel_stats.empirical_cdf(values))
        frame.insert(0, "realization", realization)
        frames.append(frame)
    _write_frame(out_dir / f"cdf_cir_{label}.csv", pd.concat(frames, ignore_index=True))

    _write_frame(out_dir / f"cdf_avg_{label}.csv", channel_stats.cdf_to_frame(channel_stats.empirical_cdf(averaged)))


def _write_manifest(config: SweepConfig, out_dir: Path, result: SweepResult, skipped: int) -> None:
    manifest = {
        "tool": "foliage-channel",
        "version": __version__,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "config": config.model_dump(mode="json"),
        "sweep_values": config.sweep_values,
        "records": len(result.records) + skipped,
        "new_records": len(result.records),
        "resumed_records": skipped,
        "failures": [asdict(f) for f in result.failures],
    }
    (out_dir / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_sweep(
    config: SweepConfig,
    *,
    out_dir: Optional[Path] = None,
    threads: int = 1,
    chunk: int = 8192,
) -> SweepResult:
    """
    Run every (point, realization) pair not already present in records.csv.

    Records are appended as they arrive (in job order) so an interrupted run
    can resume; the final records.csv is rewritten sorted by (point,
    realization), which makes it identical to an uninterrupted run.
    """
    out_dir = Path(out_dir or config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records_path = out_dir / RECORDS_FILE
    timings_path = out_dir / TIMINGS_FILE

    done: set[tuple[str, int]] = set()
    if records_path.exists():
        previous = load_records(records_path)
        done = {_key(p, r) for p, r in zip(previous["point_value"].astype(float), previous["realization"])}
        logger.info("resuming sweep", extra={"completed": len(done), "out": str(out_dir)})

    keep_cir = config.emit_pdps or config.emit_cdfs
    jobs = [
        (config, value, r, keep_cir, chunk)
        for value in config.sweep_values
        for r in range(config.realizations)
        if _key(value, r) not in done
    ]
    start_ts = time.perf_counter()
    result = SweepResult()
    cirs: dict[str, list] = defaultdict(list)
    remaining: dict[str, int] = defaultdict(int)
    for job in jobs:
        remaining[point_label(job[1])] += 1
    for (outcome, cir), job in zip(_ordered_results(jobs, threads), jobs):
        value, realization = job[1], job[2]
        label = point_label(value)
        if isinstance(outcome, SweepRecord):
            result.records.append(outcome)
            _append_csv(records_path, [_records_row(outcome)], RECORD_COLUMNS)
            _append_csv(
                timings_path,
                [{"point_value": value, "realization": realization, "wall_time_s": outcome.wall_time_s}],
                ["point_value", "realization", "wall_time_s"],
            )
            if cir is not None:
                cirs[label].append((realization, cir))
        else:
            result.failures.append(outcome)
        remaining[label] -= 1
        if remaining[label] == 0:
            logger.info("sweep point completed", extra={"point": label, "realizations": config.realizations})

    complete = {label for label, items in cirs.items() if len(items) == config.realizations}
    if records_path.exists():
        final = _sorted_records(load_records(records_path))
        _write_frame(records_path, final)
        if timings_path.exists():
            _write_frame(timings_path, _sorted_records(pd.read_csv(timings_path)))
        write_aggregates(config, final, out_dir)
        result.aggregates = pd.read_csv(out_dir / AGGREGATES_FILE)
        result.histogram = pd.read_csv(out_dir / HISTOGRAM_FILE)
    if result.failures:
        failures = pd.DataFrame([asdict(f) for f in result.failures])
        failures["seed"] = failures["seed"].astype(str)
        _write_frame(out_dir / FAILURES_FILE, failures)
    elif (out_dir / FAILURES_FILE).exists():
        (out_dir / FAILURES_FILE).unlink()
    if keep_cir:
        _write_profiles(config, out_dir, cirs, complete)
    _write_manifest(config, out_dir, result, skipped=len(done))

    logger.info(
        "sweep completed",
        extra={
            "records": len(result.records),
            "resumed": len(done),
            "failures": len(result.failures),
            "elapsed_ms": int((time.perf_counter() - start_ts) * 1000),
        },
    )
    return result
