"""Static SVG line charts with no plotting dependency."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

from fedbal.errors import InvalidArgumentError

WIDTH = 800
HEIGHT = 480
PLOT_LEFT = 70.0
PLOT_RIGHT = 620.0
PLOT_TOP = 40.0
PLOT_BOTTOM = 420.0
PAD_FRACTION = 0.05
N_TICKS = 5
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def padded_range(values: Sequence[float]) -> tuple[float, float]:
    lo, hi = min(values), max(values)
    span = hi - lo
    if span == 0:
        pad = abs(lo) * PAD_FRACTION or PAD_FRACTION
    else:
        pad = span * PAD_FRACTION
    return lo - pad, hi + pad


def _num(v: float) -> str:
    return f"{v:.2f}"


def _tick_label(v: float) -> str:
    return f"{v:.3g}"


def render_chart(
    series: Mapping[str, Sequence[tuple[float, float]]],
    title: str = "",
    x_label: str = "round",
    y_label: str = "value",
) -> str:
    """Return the SVG document for ``series`` (name -> [(x, y), ...])."""
    if not series:
        raise InvalidArgumentError("no series to plot")
    for name, points in series.items():
        if not points:
            raise InvalidArgumentError(f"series {name!r} is empty")

    xs = [float(x) for pts in series.values() for x, _ in pts]
    ys = [float(y) for pts in series.values() for _, y in pts]
    x_lo, x_hi = padded_range(xs)
    y_lo, y_hi = padded_range(ys)

    def sx(x: float) -> float:
        return PLOT_LEFT + (x - x_lo) / (x_hi - x_lo) * (PLOT_RIGHT - PLOT_LEFT)

    def sy(y: float) -> float:
        return PLOT_BOTTOM - (y - y_lo) / (y_hi - y_lo) * (PLOT_BOTTOM - PLOT_TOP)

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" font-size="15">{escape(title)}</text>')

    out.append(
        f'<g id="axes" stroke="black" stroke-width="1" data-x-min="{x_lo!r}" data-x-max="{x_hi!r}" '
        f'data-y-min="{y_lo!r}" data-y-max="{y_hi!r}">'
    )
    out.append(f'<line x1="{_num(PLOT_LEFT)}" y1="{_num(PLOT_BOTTOM)}" x2="{_num(PLOT_RIGHT)}" y2="{_num(PLOT_BOTTOM)}"/>')
    out.append(f'<line x1="{_num(PLOT_LEFT)}" y1="{_num(PLOT_TOP)}" x2="{_num(PLOT_LEFT)}" y2="{_num(PLOT_BOTTOM)}"/>')
    out.append("</g>")

    out.append('<g id="ticks" font-size="11">')
    for i in range(N_TICKS):
        fx = x_lo + (x_hi - x_lo) * i / (N_TICKS - 1)
        fy = y_lo + (y_hi - y_lo) * i / (N_TICKS - 1)
        px, py = sx(fx), sy(fy)
        out.append(f'<line x1="{_num(px)}" y1="{_num(PLOT_BOTTOM)}" x2="{_num(px)}" y2="{_num(PLOT_BOTTOM + 5)}" stroke="black"/>')
        out.append(f'<text x="{_num(px)}" y="{_num(PLOT_BOTTOM + 18)}" text-anchor="middle">{_tick_label(fx)}</text>')
        out.append(f'<line x1="{_num(PLOT_LEFT - 5)}" y1="{_num(py)}" x2="{_num(PLOT_LEFT)}" y2="{_num(py)}" stroke="black"/>')
        out.append(f'<text x="{_num(PLOT_LEFT - 8)}" y="{_num(py + 4)}" text-anchor="end">{_tick_label(fy)}</text>')
    out.append("</g>")

    mid_x = (PLOT_LEFT + PLOT_RIGHT) / 2
    mid_y = (PLOT_TOP + PLOT_BOTTOM) / 2
    out.append(f'<text x="{_num(mid_x)}" y="{_num(PLOT_BOTTOM + 40)}" text-anchor="middle">{escape(x_label)}</text>')
    out.append(
        f'<text x="18" y="{_num(mid_y)}" text-anchor="middle" transform="rotate(-90 18 {_num(mid_y)})">'
        f"{escape(y_label)}</text>"
    )

    out.append('<g id="series" fill="none" stroke-width="2">')
    for i, (name, points) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{_num(sx(float(x)))},{_num(sy(float(y)))}" for x, y in points)
        out.append(f'<polyline data-series="{escape(name)}" stroke="{color}" points="{coords}"/>')
    out.append("</g>")

    out.append('<g id="legend">')
    for i, name in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        y = PLOT_TOP + 10 + 20 * i
        out.append(f'<line x1="640" y1="{_num(y)}" x2="665" y2="{_num(y)}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="672" y="{_num(y + 4)}">{escape(name)}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_chart(
    series: Mapping[str, Sequence[tuple[float, float]]],
    path: str | Path,
    title: str = "",
    x_label: str = "round",
    y_label: str = "value",
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_chart(series, title, x_label, y_label))
    return path
