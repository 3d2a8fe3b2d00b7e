"""Self-contained SVG line charts: axes, ticks, polylines, legend.

Kept deliberately tiny so plots need no external tooling.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]

_W, _H = 640, 440
_ML, _MR, _MT, _MB = 70, 20, 40, 50


def _scale(vals, lo, hi, out_lo, out_hi):
    span = hi - lo
    if span == 0:
        span = 1.0
    return [out_lo + (v - lo) / span * (out_hi - out_lo) for v in vals]


def line_chart(xs, series: dict[str, list[float]], title: str = "",
               xlabel: str = "", ylabel: str = "", desc: str = "") -> str:
    """Render one chart to an SVG string; series maps label -> y values."""
    xs = [float(x) for x in xs]
    all_y = [float(y) for ys in series.values() for y in ys]
    if not xs or not all_y:
        raise ValueError("line_chart: nothing to plot")
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(all_y), max(all_y)
    if y_lo == y_hi:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    px = _scale(xs, x_lo, x_hi, _ML, _W - _MR)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="13">',
    ]
    if desc:
        parts.append(f"<desc>{escape(desc)}</desc>")
    parts.append(f'<rect width="{_W}" height="{_H}" fill="white"/>')
    if title:
        parts.append(f'<text x="{_W / 2}" y="24" text-anchor="middle" '
                     f'font-size="16">{escape(title)}</text>')
    # axes
    parts.append(f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" '
                 f'stroke="black"/>')
    parts.append(f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" stroke="black"/>')
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        xv = x_lo + frac * (x_hi - x_lo)
        yv = y_lo + frac * (y_hi - y_lo)
        xpix = _ML + frac * (_W - _ML - _MR)
        ypix = (_H - _MB) - frac * (_H - _MT - _MB)
        parts.append(f'<line x1="{xpix:.1f}" y1="{_H - _MB}" x2="{xpix:.1f}" '
                     f'y2="{_H - _MB + 5}" stroke="black"/>')
        parts.append(f'<text x="{xpix:.1f}" y="{_H - _MB + 20}" '
                     f'text-anchor="middle">{xv:g}</text>')
        parts.append(f'<line x1="{_ML - 5}" y1="{ypix:.1f}" x2="{_ML}" '
                     f'y2="{ypix:.1f}" stroke="black"/>')
        parts.append(f'<text x="{_ML - 8}" y="{ypix + 4:.1f}" '
                     f'text-anchor="end">{yv:.3g}</text>')
    if xlabel:
        parts.append(f'<text x="{(_ML + _W - _MR) / 2}" y="{_H - 12}" '
                     f'text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        parts.append(f'<text x="16" y="{(_MT + _H - _MB) / 2}" text-anchor="middle" '
                     f'transform="rotate(-90 16 {(_MT + _H - _MB) / 2})">'
                     f'{escape(ylabel)}</text>')
    for si, (label, ys) in enumerate(series.items()):
        color = _COLORS[si % len(_COLORS)]
        py = _scale([float(y) for y in ys], y_lo, y_hi, _H - _MB, _MT)
        pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(px, py))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="2"/>')
        for x, y in zip(px, py):
            parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3" fill="{color}"/>')
        ly = _MT + 16 * si
        parts.append(f'<line x1="{_W - _MR - 120}" y1="{ly}" x2="{_W - _MR - 96}" '
                     f'y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{_W - _MR - 90}" y="{ly + 4}">{escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
