"""
Curve export: one SVG per (dataset, model) with two panels, task metric and
invariance ratio against epoch, one polyline per (method, split) averaged
over seeds. Also writes summary.csv with the last point of every series.
"""
from __future__ import annotations

import csv
import logging
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union
from xml.sax.saxutils import escape

import numpy as np

from idgnn.harness.metrics import MetricsRow, fmt_float, read_metrics

logger = logging.getLogger(__name__)

WIDTH, PANEL_HEIGHT, MARGIN = 640, 260, 50
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
PANELS = (("task_metric", "task metric"), ("invariance_ratio", "invariance ratio"))

Series = Dict[str, List[Tuple[int, float]]]


def _series(rows: Sequence[MetricsRow], column: str) -> Series:
    """(method/split) -> [(epoch, mean over seeds)] for one metric column."""
    buckets: Dict[str, Dict[int, List[float]]] = defaultdict(lambda: defaultdict(list))
    for r in rows:
        value = getattr(r, column)
        if value is not None:
            buckets[f"{r.method}/{r.split}"][r.epoch].append(value)
    return {
        label: [(epoch, float(np.mean(vals))) for epoch, vals in sorted(points.items())]
        for label, points in sorted(buckets.items())
    }


def axis_bounds(series: Series) -> Tuple[float, float, float, float]:
    """(x_min, x_max, y_min, y_max) enclosing every point; degenerate ranges are widened."""
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    if not xs:
        return 0.0, 1.0, 0.0, 1.0
    x0, x1 = float(min(xs)), float(max(xs))
    y0, y1 = float(min(min(ys), 0.0)), float(max(max(ys), 1.0))
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    return x0, x1, y0, y1


def _panel(series: Series, title: str, top: float, colors: Dict[str, str]) -> List[str]:
    x0, x1, y0, y1 = axis_bounds(series)
    left, right = MARGIN, WIDTH - MARGIN
    bottom = top + PANEL_HEIGHT - MARGIN

    def sx(x: float) -> float:
        return left + (x - x0) / (x1 - x0) * (right - left)

    def sy(y: float) -> float:
        return bottom - (y - y0) / (y1 - y0) * (bottom - top - 20)

    parts = [
        f'<text x="{left}" y="{top + 12}" font-size="13">{escape(title)}</text>',
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{bottom}" x2="{left}" y2="{top + 20}" stroke="black"/>',
        f'<text x="{left}" y="{bottom + 15}" font-size="10">{fmt_float(x0)}</text>',
        f'<text x="{right}" y="{bottom + 15}" font-size="10" text-anchor="end">{fmt_float(x1)}</text>',
        f'<text x="{left - 5}" y="{bottom}" font-size="10" text-anchor="end">{fmt_float(y0)}</text>',
        f'<text x="{left - 5}" y="{top + 24}" font-size="10" text-anchor="end">{fmt_float(y1)}</text>',
    ]
    for label, pts in series.items():
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        parts.append(
            f'<polyline fill="none" stroke="{colors[label]}" stroke-width="1.5" '
            f'data-label="{escape(label)}" points="{coords}"/>'
        )
    return parts


def render_svg(rows: Sequence[MetricsRow], title: str) -> Tuple[str, List[str]]:
    """SVG text plus the series labels it contains."""
    panels = [(_series(rows, col), name) for col, name in PANELS]
    labels = sorted({label for series, _ in panels for label in series})
    colors = {label: PALETTE[i % len(PALETTE)] for i, label in enumerate(labels)}
    height = PANEL_HEIGHT * len(panels) + 30 + 16 * len(labels)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}">',
        f'<text x="{MARGIN}" y="18" font-size="15">{escape(title)}</text>',
    ]
    for i, (series, name) in enumerate(panels):
        parts.extend(_panel(series, name, 25 + i * PANEL_HEIGHT, colors))
    legend_top = 25 + len(panels) * PANEL_HEIGHT
    for i, label in enumerate(labels):
        y = legend_top + 16 * i
        parts.append(f'<line x1="{MARGIN}" y1="{y}" x2="{MARGIN + 20}" y2="{y}" stroke="{colors[label]}" stroke-width="2"/>')
        parts.append(f'<text x="{MARGIN + 26}" y="{y + 4}" font-size="11">{escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n", labels


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


def export_curves(metrics_csv: Union[str, Path], out: Union[str, Path]) -> List[Path]:
    """Write one SVG per (dataset, model) plus summary.csv under `out`.

    An empty CSV writes nothing and returns [] with a warning.
    """
    rows = read_metrics(metrics_csv)
    out = Path(out)
    if not rows:
        logger.warning("%s holds no metric rows; no curves exported", metrics_csv)
        return []
    out.mkdir(parents=True, exist_ok=True)

    groups: Dict[Tuple[str, str], List[MetricsRow]] = defaultdict(list)
    for r in rows:
        groups[(r.dataset, r.model)].append(r)

    written: List[Path] = []
    summary: List[List[str]] = []
    for (dataset, model), group in sorted(groups.items()):
        svg, _ = render_svg(group, f"{dataset} / {model}")
        path = out / f"{_safe(dataset)}__{_safe(model)}.svg"
        path.write_text(svg, encoding="utf-8")
        written.append(path)
        for col, _ in PANELS:
            for label, pts in _series(group, col).items():
                method, split = label.split("/", 1)
                last_epoch, last_value = pts[-1]
                summary.append([dataset, model, method, split, col, str(last_epoch), fmt_float(last_value)])

    summary_path = out / "summary.csv"
    with open(summary_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["dataset", "model", "method", "split", "metric", "last_epoch", "value"])
        writer.writerows(summary)
    written.append(summary_path)
    logger.info("Exported %d curve file(s) to %s", len(written) - 1, out)
    return written
