"""Minimal SVG line charts with min/max bands."""

from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


@dataclass
class Series:
    label: str
    x: np.ndarray
    mean: np.ndarray
    low: np.ndarray | None = None
    high: np.ndarray | None = None


def _ticks(lo, hi, count=5):
    if hi <= lo:
        return [lo]
    return list(np.linspace(lo, hi, count))


def _fmt(v):
    return f"{v:.3g}"


def line_chart(series, title="", xlabel="", ylabel="", width=640, height=400) -> str:
    """Render ``series`` as an SVG document string."""
    if not series:
        raise ValueError("nothing to plot")
    left, right, top, bottom = 70, 150, 40, 50
    pw, ph = width - left - right, height - top - bottom
    xs = np.concatenate([np.asarray(s.x, float) for s in series])
    ys = [np.asarray(s.mean, float) for s in series]
    ys += [np.asarray(s.low, float) for s in series if s.low is not None]
    ys += [np.asarray(s.high, float) for s in series if s.high is not None]
    ys = np.concatenate(ys)
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def px(v):
        return left + (np.asarray(v, float) - x0) / (x1 - x0) * pw

    def py(v):
        return top + (1.0 - (np.asarray(v, float) - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
    ]
    for t in _ticks(x0, x1):
        x = px(t)
        out.append(f'<line x1="{x:.2f}" y1="{top + ph}" x2="{x:.2f}" y2="{top + ph + 4}" stroke="#444"/>')
        out.append(f'<text x="{x:.2f}" y="{top + ph + 16}" text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(y0, y1):
        y = py(t)
        out.append(f'<line x1="{left - 4}" y1="{y:.2f}" x2="{left}" y2="{y:.2f}" stroke="#444"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.2f}" text-anchor="end">{_fmt(t)}</text>')

    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        sx = px(s.x)
        if s.low is not None and s.high is not None:
            upper = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(sx, py(s.high)))
            lower = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(sx[::-1], py(s.low)[::-1]))
            out.append(f'<polygon points="{upper} {lower}" fill="{color}" fill-opacity="0.18" stroke="none"/>')
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(sx, py(s.mean)))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.6"/>')
        ly = top + 14 + 16 * i
        out.append(f'<line x1="{left + pw + 12}" y1="{ly - 4}" x2="{left + pw + 32}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 36}" y="{ly}">{escape(s.label)}</text>')

    out.append(f'<text x="{left + pw / 2}" y="{top - 14}" text-anchor="middle" font-size="13">{escape(title)}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2})">{escape(ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
