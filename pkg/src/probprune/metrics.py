"""Run metrics: in-memory records plus the fixed-schema CSV files.

The metrics CSV always has the header
    iteration,phase,loss,val_acc,layer_id,pruned_fraction,mean_p
one row per (evaluation point, conv layer), UTF-8 with LF line endings.
`loss` is the mean training loss since the previous evaluation of the same
phase (for a phase's first row, the loss of a deterministic probe batch).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

METRICS_HEADER = "iteration,phase,loss,val_acc,layer_id,pruned_fraction,mean_p"


@dataclass
class MetricRow:
    iteration: int
    phase: str
    loss: float
    val_acc: float
    layer_id: int
    pruned_fraction: float
    mean_p: float

    def to_line(self) -> str:
        return (
            f"{self.iteration},{self.phase},{self.loss!r},{self.val_acc!r},"
            f"{self.layer_id},{self.pruned_fraction!r},{self.mean_p!r}"
        )


class RunMetrics:
    """Collects metric rows, optionally streaming them to a CSV file.

    When attached to a path, every appended row is written and flushed
    immediately; `rows_written` is the resume cursor stored in checkpoints.
    """

    def __init__(self):
        self.rows: list[MetricRow] = []
        self._fh = None

    def attach(self, path: str | os.PathLike, existing_rows: int = 0) -> None:
        """Stream future rows to `path`, truncating it to `existing_rows` first.

        With existing_rows=0 the file is recreated with just the header; a
        resumed run passes its checkpoint's cursor to drop any rows written
        after the checkpoint was taken.
        """
        if self._fh is not None:
            raise RuntimeError("metrics already attached to a file")
        if existing_rows > 0:
            kept = read_metrics(path)[:existing_rows]
            if len(kept) < existing_rows:
                raise ValueError(
                    f"{path} holds {len(kept)} rows, cannot resume at {existing_rows}"
                )
            self.rows = kept
        payload = METRICS_HEADER + "\n" + "".join(r.to_line() + "\n" for r in self.rows)
        self._fh = open(path, "w", encoding="utf-8", newline="\n")
        self._fh.write(payload)
        self._fh.flush()

    @property
    def rows_written(self) -> int:
        return len(self.rows)

    def add(self, row: MetricRow) -> None:
        self.rows.append(row)
        if self._fh is not None:
            self._fh.write(row.to_line() + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def phase_rows(self, phase: str) -> list[MetricRow]:
        return [r for r in self.rows if r.phase == phase]


def emit_metrics(metrics: RunMetrics | list[MetricRow], path: str | os.PathLike) -> None:
    """Write all rows to a CSV file in one shot (UTF-8, LF)."""
    rows = metrics.rows if isinstance(metrics, RunMetrics) else metrics
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(METRICS_HEADER + "\n")
        for row in rows:
            fh.write(row.to_line() + "\n")


def read_metrics(path: str | os.PathLike) -> list[MetricRow]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != METRICS_HEADER:
        raise ValueError(f"{path} does not start with the metrics header")
    rows = []
    for line in lines[1:]:
        it, phase, loss, acc, lid, frac, mean_p = line.split(",")
        rows.append(
            MetricRow(int(it), phase, float(loss), float(acc), int(lid), float(frac), float(mean_p))
        )
    return rows


def write_recovery_csv(records, path: str | os.PathLike) -> None:
    """Serialize recovery records (layer_id, counts, ratio) as CSV."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("layer_id,initial_below,recovered,recovery_ratio\n")
        for rec in records:
            fh.write(
                f"{rec.layer_id},{len(rec.initial_below)},{len(rec.final_above)},"
                f"{rec.recovery_ratio!r}\n"
            )


def write_sensitivity_csv(curves, path: str | os.PathLike) -> None:
    """Serialize sensitivity curves as long-format CSV rows."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("layer_id,retained_fraction,normalized_error\n")
        for curve in curves:
            for f, e in zip(curve.retained_fraction, curve.normalized_error):
                fh.write(f"{curve.layer_id},{float(f)!r},{float(e)!r}\n")


def write_ratio_plan_csv(plan, path: str | os.PathLike) -> None:
    """Serialize a ratio plan as CSV with a trailing total row."""
    pruned = plan.pruned_flops
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("layer_id,remaining_ratio,pruning_ratio,dense_flops,pruned_flops\n")
        for lid in sorted(plan.remaining):
            fh.write(
                f"{lid},{plan.remaining[lid]!r},{plan.pruning_ratios[lid]!r},"
                f"{plan.dense_flops[lid]!r},{pruned[lid]!r}\n"
            )
        dense_total = sum(plan.dense_flops.values())
        pruned_total = sum(pruned.values())
        overall = pruned_total / dense_total
        fh.write(f"total,{overall!r},{1.0 - overall!r},{dense_total!r},{pruned_total!r}\n")
