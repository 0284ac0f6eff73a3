"""Result rows and their CSV form."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

COLUMNS = ("sweep_param", "sweep_value", "estimator", "nmse", "doa_rmse_deg",
           "trials", "failures", "wall_s")


@dataclass(frozen=True)
class ResultRow:
    sweep_param: str
    sweep_value: float
    estimator: str
    nmse: float
    doa_rmse_deg: float | None
    trials: int
    failures: int
    wall_s: float


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)

    def add(self, row: ResultRow) -> None:
        self.rows.append(row)

    def extend(self, other: ResultTable) -> None:
        self.rows.extend(other.rows)

    def sorted_rows(self) -> list[ResultRow]:
        """Rows grouped by sweep_param (first-seen order), then by value and tag."""
        first_seen = {}
        for r in self.rows:
            first_seen.setdefault(r.sweep_param, len(first_seen))
        return sorted(self.rows, key=lambda r: (first_seen[r.sweep_param], r.sweep_value, r.estimator))

    def select(self, estimator: str | None = None, sweep_param: str | None = None) -> list[ResultRow]:
        return [r for r in self.sorted_rows()
                if (estimator is None or r.estimator == estimator)
                and (sweep_param is None or r.sweep_param == sweep_param)]

    def value(self, estimator: str, sweep_value: float, sweep_param: str | None = None,
              column: str = "nmse") -> float:
        hits = [r for r in self.select(estimator, sweep_param) if r.sweep_value == sweep_value]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} rows for {estimator} at {sweep_param}={sweep_value}")
        return getattr(hits[0], column)


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def emit_csv(table: ResultTable, path, timings: bool = True) -> None:
    """Write ``table`` as CSV; ``timings=False`` writes 0.0 for wall_s so output is reproducible."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in table.sorted_rows():
            if not timings:
                r = replace(r, wall_s=0.0)
            w.writerow([_fmt(getattr(r, c)) for c in COLUMNS])


def read_csv(path) -> ResultTable:
    table = ResultTable()
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for rec in reader:
            table.add(ResultRow(
                rec["sweep_param"], float(rec["sweep_value"]), rec["estimator"],
                float(rec["nmse"]) if rec["nmse"] else math.nan,
                float(rec["doa_rmse_deg"]) if rec["doa_rmse_deg"] else None,
                int(rec["trials"]), int(rec["failures"]), float(rec["wall_s"]),
            ))
    return table
