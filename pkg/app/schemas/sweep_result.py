"""Sweep records and their per-point summaries."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import pandas as pd

__all__ = ["RECORD_COLUMNS", "SweepRecord", "SweepFailure", "SweepResult"]

# records.csv column order; wall time lives in timings.csv so records stay reproducible.
RECORD_COLUMNS = ["point_value", "realization", "seed", "rss_dbm", "pl_db", "drms_ns", "n_mpcs"]


@dataclass(frozen=True)
class SweepRecord:
    point_value: float
    realization: int
    seed: int
    rss_dbm: float
    pl_db: float
    drms_ns: float
    n_mpcs: int
    wall_time_s: float = 0.0

    @property
    def key(self) -> tuple[float, int]:
        return (self.point_value, self.realization)


@dataclass(frozen=True)
class SweepFailure:
    point_value: float
    realization: int
    seed: int
    error: str
    message: str


@dataclass
class SweepResult:
    records: list[SweepRecord] = field(default_factory=list)
    failures: list[SweepFailure] = field(default_factory=list)
    aggregates: pd.DataFrame | None = None
    histogram: pd.DataFrame | None = None

    def records_frame(self) -> pd.DataFrame:
        rows = [asdict(r) for r in sorted(self.records, key=lambda r: r.key)]
        return pd.DataFrame(rows, columns=[*RECORD_COLUMNS, "wall_time_s"])
