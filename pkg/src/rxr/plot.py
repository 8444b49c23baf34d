"""Deterministic SVG line charts for learning curves and sweep summaries.

No plotting dependency: charts are built as plain SVG text with fixed
canvas geometry, fixed float formatting, and a fixed palette, so the
same inputs always produce byte-identical files. Multi-seed series are
drawn as the pointwise mean with a min/max band across seeds.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

WIDTH, HEIGHT = 800, 500
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 40, 50
PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd",
    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
)

# kind -> (x column, y column, axis labels) over the training-log schema
CURVE_KINDS = {
    "return": ("env_steps", "mean_return", "environment steps", "mean episode return"),
    "success": ("env_steps", "success_rate", "environment steps", "success rate"),
    "drop": ("env_steps", "drop_rate", "environment steps", "drop rate"),
    "entropy": ("env_steps", "entropy", "environment steps", "policy entropy"),
}


@dataclass
class Series:
    """One labeled line: a list of (x, y) runs, typically one per seed."""

    label: str
    runs: list  # [(np.ndarray, np.ndarray), ...]


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _px(v: float) -> str:
    return f"{v:.2f}"


def _resample(runs, grid_points: int):
    """Common-grid mean and min/max envelope across runs.

    Runs may have different x grids (env-step counts differ per seed);
    each is linearly interpolated onto an even grid spanning the range
    where all runs are defined.
    """
    if len(runs) == 1:
        x, y = runs[0]
        return np.asarray(x, float), np.asarray(y, float), None, None
    x0 = max(float(np.min(x)) for x, _ in runs)
    x1 = min(float(np.max(x)) for x, _ in runs)
    if x1 <= x0:
        x1 = x0 + 1.0
    grid = np.linspace(x0, x1, grid_points)
    ys = np.stack([np.interp(grid, np.asarray(x, float), np.asarray(y, float))
                   for x, y in runs])
    return grid, ys.mean(axis=0), ys.min(axis=0), ys.max(axis=0)


def render(series, *, title="", x_label="", y_label="", grid_points=200) -> str:
    """Render labeled multi-run series to SVG text."""
    if not series:
        raise ValueError("no series to plot")
    prepared = []
    for s in series:
        if not s.runs:
            raise ValueError(f"series {s.label!r} has no runs")
        for x, y in s.runs:
            if len(x) != len(y) or len(x) == 0:
                raise ValueError(f"series {s.label!r} has a malformed run")
        prepared.append((s.label, *_resample(s.runs, grid_points)))

    xs = np.concatenate([p[1] for p in prepared])
    all_y = [p[2] for p in prepared]
    all_y += [p[3] for p in prepared if p[3] is not None]
    all_y += [p[4] for p in prepared if p[4] is not None]
    ys = np.concatenate(all_y)
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    if y_hi <= y_lo:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    px0, px1 = MARGIN_L, WIDTH - MARGIN_R
    py0, py1 = HEIGHT - MARGIN_B, MARGIN_T

    def X(v):
        return px0 + (v - x_lo) / (x_hi - x_lo) * (px1 - px0)

    def Y(v):
        return py0 + (v - y_lo) / (y_hi - y_lo) * (py1 - py0)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="monospace" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
    ]
    # axes frame + ticks + grid
    for i in range(5):
        fx = x_lo + i * (x_hi - x_lo) / 4
        fy = y_lo + i * (y_hi - y_lo) / 4
        gx, gy = X(fx), Y(fy)
        out.append(f'<line x1="{_px(gx)}" y1="{py0}" x2="{_px(gx)}" y2="{py1}" '
                   f'stroke="#dddddd"/>')
        out.append(f'<line x1="{px0}" y1="{_px(gy)}" x2="{px1}" y2="{_px(gy)}" '
                   f'stroke="#dddddd"/>')
        out.append(f'<text x="{_px(gx)}" y="{py0 + 18}" text-anchor="middle">'
                   f'{_fmt(fx)}</text>')
        out.append(f'<text x="{px0 - 6}" y="{_px(gy + 4)}" text-anchor="end">'
                   f'{_fmt(fy)}</text>')
    out.append(f'<rect x="{px0}" y="{py1}" width="{px1 - px0}" height="{py0 - py1}" '
               f'fill="none" stroke="#000000"/>')

    for idx, (label, gx, mean, lo, hi) in enumerate(prepared):
        color = PALETTE[idx % len(PALETTE)]
        if lo is not None:
            top = " ".join(f"{_px(X(a))},{_px(Y(b))}" for a, b in zip(gx, hi))
            bot = " ".join(f"{_px(X(a))},{_px(Y(b))}" for a, b in zip(gx[::-1], lo[::-1]))
            out.append(f'<polygon points="{top} {bot}" fill="{color}" '
                       f'fill-opacity="0.18" stroke="none"/>')
        pts = " ".join(f"{_px(X(a))},{_px(Y(b))}" for a, b in zip(gx, mean))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                   f'stroke-width="1.5"/>')

    # legend, top-right inside the frame
    for idx, (label, *_rest) in enumerate(prepared):
        color = PALETTE[idx % len(PALETTE)]
        ly = py1 + 16 + 16 * idx
        out.append(f'<line x1="{px1 - 150}" y1="{ly - 4}" x2="{px1 - 120}" '
                   f'y2="{ly - 4}" stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{px1 - 114}" y="{ly}">{label}</text>')

    if title:
        out.append(f'<text x="{WIDTH // 2}" y="22" text-anchor="middle" '
                   f'font-size="14">{title}</text>')
    if x_label:
        out.append(f'<text x="{(px0 + px1) // 2}" y="{HEIGHT - 12}" '
                   f'text-anchor="middle">{x_label}</text>')
    if y_label:
        out.append(f'<text x="16" y="{(py0 + py1) // 2}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {(py0 + py1) // 2})">{y_label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _read_columns(path, x_col: str, y_col: str):
    with open(path, "r", newline="") as f:
        reader = csv.DictReader(f)
        cols = reader.fieldnames or []
        if x_col not in cols or y_col not in cols:
            raise ValueError(f"{path}: expected columns {x_col!r}, {y_col!r}, "
                             f"found {cols}")
        xs, ys = [], []
        for row in reader:
            xs.append(float(row[x_col]))
            ys.append(float(row[y_col]))
    if not xs:
        raise ValueError(f"{path}: no data rows")
    return np.asarray(xs), np.asarray(ys)


def plot_curves(labeled_paths, kind: str, out_path, title="") -> str:
    """Render training-log CSVs (grouped per label across seeds) to an SVG file.

    labeled_paths: [(label, [csv path, ...]), ...]
    """
    if kind not in CURVE_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; have {sorted(CURVE_KINDS)}")
    x_col, y_col, x_label, y_label = CURVE_KINDS[kind]
    series = [Series(label, [_read_columns(p, x_col, y_col) for p in paths])
              for label, paths in labeled_paths]
    svg = render(series, title=title, x_label=x_label, y_label=y_label)
    with open(out_path, "w", encoding="utf-8") as f:
        f.write(svg)
    return svg
