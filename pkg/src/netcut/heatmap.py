"""SVG heatmaps of head-weight trajectories on a logarithmic color scale."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

from .errors import FormatError

FLOOR = 1e-4
# viridis-like stops, dark (small weight) to bright (weight 1)
STOPS = ((0.0, (68, 1, 84)), (0.25, (59, 82, 139)), (0.5, (33, 145, 140)),
         (0.75, (94, 201, 98)), (1.0, (253, 231, 37)))

CELL_W, CELL_H = 10, 16
LEFT, TOP = 40, 20


def level(w: float) -> float:
    """Position of ``w`` on the color scale: 0 at the 1e-4 floor, 1 at w = 1."""
    w = min(max(float(w), FLOOR), 1.0)
    return (math.log10(w) - math.log10(FLOOR)) / -math.log10(FLOOR)


def color(w: float) -> str:
    t = level(w)
    for (t0, c0), (t1, c1) in zip(STOPS, STOPS[1:]):
        if t <= t1:
            a = (t - t0) / (t1 - t0)
            rgb = [round(x0 + a * (x1 - x0)) for x0, x1 in zip(c0, c1)]
            return "#%02x%02x%02x" % tuple(rgb)
    return "#%02x%02x%02x" % STOPS[-1][1]


def render(w_matrix: np.ndarray, title: str = "head importance weights") -> str:
    """SVG with one row per head and one column per epoch."""
    w_matrix = np.asarray(w_matrix, dtype=np.float64)
    if w_matrix.ndim != 2 or w_matrix.shape[0] == 0:
        raise FormatError("need at least one epoch of weights")
    epochs, n = w_matrix.shape
    grid_w, grid_h = epochs * CELL_W, n * CELL_H
    legend_x = LEFT + grid_w + 20
    width, height = legend_x + 70, max(TOP + grid_h + 30, TOP + 5 * 30 + 30)
    out = [f'<?xml version="1.0" encoding="UTF-8"?>',
           f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
           f'width="{width}" height="{height}">',
           f'<title>{escape(title)}</title>']
    for k in range(n):
        y = TOP + k * CELL_H
        out.append(f'<text x="{LEFT - 4}" y="{y + CELL_H - 4}" font-size="10" '
                   f'text-anchor="end">{k + 1}</text>')
        for e in range(epochs):
            out.append(f'<rect class="cell" data-head="{k + 1}" data-epoch="{e + 1}" '
                       f'x="{LEFT + e * CELL_W}" y="{y}" width="{CELL_W}" height="{CELL_H}" '
                       f'fill="{color(w_matrix[e, k])}"/>')
    out.append(f'<text x="{LEFT + grid_w / 2}" y="{TOP + grid_h + 20}" font-size="10" '
               f'text-anchor="middle">epoch</text>')
    out.append('<defs><linearGradient id="scale" x1="0" y1="1" x2="0" y2="0">')
    for t, rgb in STOPS:
        out.append(f'<stop offset="{t}" stop-color="#%02x%02x%02x"/>' % rgb)
    out.append('</linearGradient></defs>')
    bar_h = 4 * 30
    out.append(f'<rect class="legend" x="{legend_x}" y="{TOP}" width="12" height="{bar_h}" '
               f'fill="url(#scale)"/>')
    for i, exp10 in enumerate(range(0, -5, -1)):
        y = TOP + i * 30
        out.append(f'<text x="{legend_x + 16}" y="{y + 4}" font-size="10">1e{exp10}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_heatmap(trajectory_csv, svg_path) -> None:
    from .training import TrajectoryLog

    log = TrajectoryLog.from_csv(trajectory_csv)
    if not log.records:
        raise FormatError(f"{trajectory_csv}: trajectory has no epochs")
    with open(svg_path, "w") as f:
        f.write(render(log.w_matrix()))
