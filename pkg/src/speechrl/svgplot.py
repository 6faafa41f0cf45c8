"""Dependency-free SVG line charts for training curves.

One polyline per input CSV; the accuracy axis is clamped to [0, 1].
Output is a pure function of the input rows, so regenerating a plot
from the same CSVs yields identical bytes.
"""

from __future__ import annotations

from pathlib import Path

from .experiment import read_metrics_csv

WIDTH, HEIGHT = 840, 520
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 72, 26, 30, 58
PALETTE = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

KINDS = {
    "accuracy": ("accuracy", "episode accuracy"),
    "stddev": ("rolling_std", "rolling std of accuracy (window 200)"),
}


def _ticks(lo: float, hi: float, n: int = 6) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def render_plot(csv_paths, kind: str, out_path) -> Path:
    """Render one metric from each CSV into a self-contained SVG."""
    if kind not in KINDS:
        raise ValueError(f"plot kind must be one of {sorted(KINDS)}, got {kind!r}")
    csv_paths = [Path(p) for p in csv_paths]
    if not csv_paths:
        raise ValueError("render_plot needs at least one CSV")
    column, y_label = KINDS[kind]

    series = []
    for p in csv_paths:
        rows = read_metrics_csv(p)
        if not rows:
            raise ValueError(f"metrics CSV {p} has no data rows")
        series.append((p.stem, [(m.episode, getattr(m, column)) for m in rows]))

    x_max = max(pt[0] for _, pts in series for pt in pts)
    x_min = 1
    if kind == "accuracy":
        y_min, y_max = 0.0, 1.0
    else:
        y_min = 0.0
        y_max = max(pt[1] for _, pts in series for pt in pts)
        y_max = y_max * 1.05 if y_max > 0 else 1.0

    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B

    def sx(x):
        return MARGIN_L + plot_w * (x - x_min) / max(x_max - x_min, 1)

    def sy(y):
        y = min(max(y, y_min), y_max)
        return MARGIN_T + plot_h * (1.0 - (y - y_min) / (y_max - y_min))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="13">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="#333" stroke-width="1"/>',
    ]

    for yt in _ticks(y_min, y_max):
        py = sy(yt)
        parts.append(f'<line x1="{MARGIN_L - 4}" y1="{py:.2f}" x2="{MARGIN_L}" y2="{py:.2f}" stroke="#333"/>')
        parts.append(
            f'<text x="{MARGIN_L - 8}" y="{py + 4:.2f}" text-anchor="end">{yt:.3g}</text>'
        )
    for xt in _ticks(x_min, x_max):
        px = sx(xt)
        parts.append(
            f'<line x1="{px:.2f}" y1="{MARGIN_T + plot_h}" x2="{px:.2f}" y2="{MARGIN_T + plot_h + 4}" stroke="#333"/>'
        )
        parts.append(
            f'<text x="{px:.2f}" y="{MARGIN_T + plot_h + 20}" text-anchor="middle">{xt:.6g}</text>'
        )
    parts.append(
        f'<text x="{MARGIN_L + plot_w / 2:.0f}" y="{HEIGHT - 14}" text-anchor="middle">episode</text>'
    )
    parts.append(
        f'<text x="20" y="{MARGIN_T + plot_h / 2:.0f}" text-anchor="middle" '
        f'transform="rotate(-90 20 {MARGIN_T + plot_h / 2:.0f})">{y_label}</text>'
    )

    for i, (name, pts) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.2"/>'
        )
        ly = MARGIN_T + 18 + i * 18
        lx = MARGIN_L + plot_w - 200
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 26}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 32}" y="{ly}">{name}</text>')

    parts.append("</svg>")
    out_path = Path(out_path)
    out_path.write_text("\n".join(parts) + "\n")
    return out_path
