"""
Metrics CSV
-----------
One row per (run, epoch, split). Columns:

    dataset, model, method, epoch, split, task_metric, invariance_ratio, K, seed

invariance_ratio and K are empty when invariance was not measured that epoch.
Floats are written with a fixed format so reruns produce identical bytes.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Union

from idgnn.errors import CurveFormatError

logger = logging.getLogger(__name__)

COLUMNS = ("dataset", "model", "method", "epoch", "split", "task_metric", "invariance_ratio", "K", "seed")


def fmt_float(x: Optional[float]) -> str:
    return "" if x is None else format(float(x), ".10g")


@dataclass(frozen=True)
class MetricsRow:
    dataset: str
    model: str
    method: str
    epoch: int
    split: str
    task_metric: Optional[float]
    invariance_ratio: Optional[float] = None
    K: Optional[int] = None
    seed: int = 0

    def to_csv(self) -> List[str]:
        return [
            self.dataset,
            self.model,
            self.method,
            str(self.epoch),
            self.split,
            fmt_float(self.task_metric),
            fmt_float(self.invariance_ratio),
            "" if self.K is None else str(self.K),
            str(self.seed),
        ]

    def to_dict(self) -> dict:
        return asdict(self)


class MetricsLog:
    """Append-only collection of rows, optionally mirrored to a CSV file."""

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.rows: List[MetricsRow] = []
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="", encoding="utf-8") as f:
                csv.writer(f, lineterminator="\n").writerow(COLUMNS)

    def append(self, row: MetricsRow) -> None:
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a", newline="", encoding="utf-8") as f:
                csv.writer(f, lineterminator="\n").writerow(row.to_csv())

    def extend(self, rows: Iterable[MetricsRow]) -> None:
        for row in rows:
            self.append(row)

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(COLUMNS)
            for row in self.rows:
                writer.writerow(row.to_csv())
        logger.info("Wrote %d metric rows to %s", len(self.rows), path)
        return path


def _opt_float(raw: str, column: str, line: int) -> Optional[float]:
    if raw.strip() == "":
        return None
    try:
        return float(raw)
    except ValueError as e:
        raise CurveFormatError(f"line {line}: column {column!r} is not a number: {raw!r}") from e


def _int(raw: str, column: str, line: int) -> int:
    try:
        return int(raw)
    except ValueError as e:
        raise CurveFormatError(f"line {line}: column {column!r} is not an integer: {raw!r}") from e


def read_metrics(path: Union[str, Path]) -> List[MetricsRow]:
    """Parse a metrics CSV; a file holding nothing (not even a header) yields []."""
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            return []
        missing = [c for c in COLUMNS if c not in header]
        if missing:
            raise CurveFormatError(f"{path}: missing columns {missing}")
        pos = {name: header.index(name) for name in COLUMNS}
        rows: List[MetricsRow] = []
        for line, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise CurveFormatError(f"line {line}: expected {len(header)} fields, got {len(record)}")
            get = lambda name: record[pos[name]]
            k_raw = get("K").strip()
            rows.append(MetricsRow(
                dataset=get("dataset"),
                model=get("model"),
                method=get("method"),
                epoch=_int(get("epoch"), "epoch", line),
                split=get("split"),
                task_metric=_opt_float(get("task_metric"), "task_metric", line),
                invariance_ratio=_opt_float(get("invariance_ratio"), "invariance_ratio", line),
                K=None if k_raw == "" else _int(k_raw, "K", line),
                seed=_int(get("seed"), "seed", line),
            ))
    return rows
