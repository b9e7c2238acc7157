"""Run aggregation (per-objective averages across runs) and pure-text SVG
curve plots of training loss and validation accuracy."""

from __future__ import annotations

import csv
import json
import os

from .errors import NoData, SchemaMismatch

SUMMARY_SCHEMA = 1


def aggregate(run_dirs) -> dict:
    """Per-objective mean of final test top-1/top-5 across runs.

    Returns {objective: {"top1": mean, "top5": mean, "runs": n}}.
    """
    if not run_dirs:
        raise NoData("no run directories given")
    groups: dict[str, list] = {}
    for d in run_dirs:
        path = os.path.join(d, "summary.json")
        with open(path) as fh:
            summary = json.load(fh)
        if summary.get("schema_version") != SUMMARY_SCHEMA:
            raise SchemaMismatch(f"{path}: schema version {summary.get('schema_version')} != {SUMMARY_SCHEMA}")
        groups.setdefault(summary["objective"], []).append(summary)
    out = {}
    for tag, rows in sorted(groups.items()):
        out[tag] = {
            "top1": sum(r["test_top1"] for r in rows) / len(rows),
            "top5": sum(r["test_top5"] for r in rows) / len(rows),
            "runs": len(rows),
        }
    return out


def report_csv(agg: dict) -> str:
    lines = ["objective,runs,mean_test_top1,mean_test_top5"]
    for tag, row in agg.items():
        lines.append(f"{tag},{row['runs']},{row['top1']:.4f},{row['top5']:.4f}")
    return "\n".join(lines) + "\n"


def report_table(agg: dict) -> str:
    width = max([len(t) for t in agg] + [len("objective")])
    lines = [f"{'objective':<{width}}  runs  top1    top5"]
    lines.append("-" * (width + 22))
    for tag, row in agg.items():
        lines.append(f"{tag:<{width}}  {row['runs']:>4}  {row['top1']:.4f}  {row['top5']:.4f}")
    return "\n".join(lines)


# -- SVG curves ------------------------------------------------------------

_PALETTE = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
]

_PANEL_W, _PANEL_H = 360, 300
_MARGIN_L, _MARGIN_T, _MARGIN_B = 55, 40, 40
_GAP = 70


def _read_curve(csv_path):
    with open(csv_path) as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise NoData(f"{csv_path} has no metric rows")
    epochs = [int(r["epoch"]) for r in rows]
    loss = [float(r["total_loss"]) for r in rows]
    top1 = [float(r["val_top1"]) for r in rows]
    return epochs, loss, top1


def _scale(vals, lo, hi, out_lo, out_hi):
    span = hi - lo
    if span == 0:
        return [(out_lo + out_hi) / 2.0 for _ in vals]
    return [out_lo + (v - lo) / span * (out_hi - out_lo) for v in vals]


def _panel(x0, title, ylabel, series, names):
    """One axes panel with a polyline (or lone point markers) per series."""
    y0 = _MARGIN_T
    parts = [
        f'<text x="{x0 + _PANEL_W / 2:.1f}" y="{y0 - 15}" text-anchor="middle" '
        f'font-size="14">{title}</text>'
    ]
    all_x = [e for ep, _ in series for e in ep]
    all_y = [v for _, vals in series for v in vals]
    x_lo, x_hi = min(all_x), max(all_x)
    y_lo, y_hi = min(all_y), max(all_y)
    if y_lo == y_hi:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    parts.append(
        f'<rect x="{x0}" y="{y0}" width="{_PANEL_W}" height="{_PANEL_H}" '
        f'fill="none" stroke="#333" stroke-width="1"/>'
    )
    for frac in (0.0, 0.5, 1.0):
        yv = y_lo + frac * (y_hi - y_lo)
        py = y0 + _PANEL_H - frac * _PANEL_H
        parts.append(
            f'<text x="{x0 - 6}" y="{py:.1f}" text-anchor="end" font-size="10" '
            f'dominant-baseline="middle">{yv:.3f}</text>'
        )
        xv = x_lo + frac * (x_hi - x_lo)
        px = x0 + frac * _PANEL_W
        parts.append(
            f'<text x="{px:.1f}" y="{y0 + _PANEL_H + 16}" text-anchor="middle" '
            f'font-size="10">{xv:.0f}</text>'
        )
    parts.append(
        f'<text x="{x0 + _PANEL_W / 2:.1f}" y="{y0 + _PANEL_H + 32}" '
        f'text-anchor="middle" font-size="11">epoch</text>'
    )
    parts.append(
        f'<text x="{x0 - 42}" y="{y0 + _PANEL_H / 2:.1f}" font-size="11" '
        f'text-anchor="middle" transform="rotate(-90 {x0 - 42} {y0 + _PANEL_H / 2:.1f})">{ylabel}</text>'
    )
    for k, ((epochs, vals), name) in enumerate(zip(series, names)):
        color = _PALETTE[k % len(_PALETTE)]
        xs = _scale(epochs, x_lo, x_hi, x0, x0 + _PANEL_W)
        ys = _scale(vals, y_lo, y_hi, y0 + _PANEL_H, y0)
        if len(xs) == 1:
            parts.append(f'<circle cx="{xs[0]:.2f}" cy="{ys[0]:.2f}" r="3" fill="{color}"/>')
        else:
            points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
            parts.append(
                f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1.5"/>'
            )
    return parts


def render_curves(csv_paths, labels=None) -> str:
    """Two-panel SVG: training loss on the left, validation top-1 on the right,
    one curve per metrics CSV. Byte-stable for identical inputs."""
    if labels is None:
        labels = [os.path.basename(os.path.dirname(os.path.abspath(p))) or f"run{i}"
                  for i, p in enumerate(csv_paths)]
    curves = [_read_curve(p) for p in csv_paths]
    loss_series = [(ep, loss) for ep, loss, _ in curves]
    acc_series = [(ep, top1) for ep, _, top1 in curves]

    total_w = _MARGIN_L + _PANEL_W + _GAP + _PANEL_W + 150
    total_h = _MARGIN_T + _PANEL_H + _MARGIN_B + 20
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{total_h}" '
        f'viewBox="0 0 {total_w} {total_h}">',
        f'<rect width="{total_w}" height="{total_h}" fill="white"/>',
    ]
    parts += _panel(_MARGIN_L, "training loss", "loss", loss_series, labels)
    parts += _panel(_MARGIN_L + _PANEL_W + _GAP, "validation top-1", "accuracy", acc_series, labels)
    lx = _MARGIN_L + 2 * _PANEL_W + _GAP + 12
    for k, name in enumerate(labels):
        color = _PALETTE[k % len(_PALETTE)]
        ly = _MARGIN_T + 14 * k
        parts.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 18}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 24}" y="{ly + 4}" font-size="11">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_curves(csv_paths, out_path, labels=None):
    svg = render_curves(csv_paths, labels)
    with open(out_path, "w") as fh:
        fh.write(svg)
