"""Small hand-rolled SVG charts.

The evaluation artifacts must be byte-stable so reruns can be diffed,
which rules out plotting libraries that embed ids, timestamps, or
dictionary-ordered attributes. This writer produces a plain line chart
from scratch: fixed two-decimal coordinates, a fixed palette, optional
signal-phase shading behind the curves, and a legend in input order.
Absent values (NaN) break the line instead of plotting as zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
RED_SHADE = "#f7e7e7"
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 56, 16, 30, 42


@dataclass
class Series:
    label: str
    t: np.ndarray
    y: np.ndarray
    dashed: bool = False


def _ticks(lo: float, hi: float, target: int = 5) -> list:
    span = hi - lo
    if span <= 0:
        return [lo]
    raw = span / target
    mag = 10.0 ** math.floor(math.log10(raw))
    step = 10 * mag
    for m in (1.0, 2.0, 5.0):
        if raw <= m * mag:
            step = m * mag
            break
    first = math.ceil(lo / step) * step
    out = []
    v = first
    while v <= hi + 1e-9 * span:
        out.append(round(v, 10))
        v += step
    return out


def _red_spans(schedule, t0: float, t1: float) -> list:
    """Intervals of red phase intersecting [t0, t1]."""
    p = schedule.period
    out = []
    k = math.floor(t0 / p)
    while k * p < t1:
        base = k * p
        for a, b in ((base, base + schedule.green_start),
                     (base + schedule.green_end, base + p)):
            a, b = max(a, t0), min(b, t1)
            if b > a + 1e-12:
                out.append((a, b))
        k += 1
    return out


def _path_d(xs, ys) -> str:
    parts = []
    pen = False
    for x, y in zip(xs, ys):
        if not (math.isfinite(x) and math.isfinite(y)):
            pen = False
            continue
        parts.append(f"{'L' if pen else 'M'}{x:.2f},{y:.2f}")
        pen = True
    return " ".join(parts)


def plot_series(path, series, *, ylabel: str, title: str = "",
                schedule=None, width: int = 640, height: int = 360) -> None:
    """Write one line chart of the given series to an SVG file.

    series is a list of Series (dashed picks a dashed stroke, handy for
    simulated-vs-actual overlays). When a signal schedule is given, its
    red phases are shaded behind the curves.
    """
    series = [s if isinstance(s, Series) else Series(*s) for s in series]
    finite = [(np.asarray(s.t, float), np.asarray(s.y, float)) for s in series]
    has_data = any(np.any(np.isfinite(t) & np.isfinite(y)) for t, y in finite)
    if not series or not has_data:
        raise DataError("nothing to plot")

    all_t = np.concatenate([t for t, _ in finite])
    all_y = np.concatenate([y[np.isfinite(y)] for _, y in finite])
    x0, x1 = float(all_t.min()), float(all_t.max())
    if x1 <= x0:
        x1 = x0 + 1.0
    y0 = min(0.0, float(all_y.min()))
    y1 = float(all_y.max())
    if y1 <= y0:
        y1 = y0 + 1.0
    y1 += 0.05 * (y1 - y0)

    pw = width - MARGIN_L - MARGIN_R
    ph = height - MARGIN_T - MARGIN_B

    def sx(v):
        return MARGIN_L + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return MARGIN_T + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
           f'height="{height}" viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>']

    if schedule is not None:
        for a, b in _red_spans(schedule, x0, x1):
            out.append(f'<rect x="{sx(a):.2f}" y="{MARGIN_T}" '
                       f'width="{sx(b) - sx(a):.2f}" height="{ph}" '
                       f'fill="{RED_SHADE}"/>')

    for v in _ticks(x0, x1):
        px = sx(v)
        out.append(f'<line x1="{px:.2f}" y1="{MARGIN_T}" x2="{px:.2f}" '
                   f'y2="{MARGIN_T + ph}" stroke="#dddddd" stroke-width="1"/>')
        out.append(f'<text x="{px:.2f}" y="{MARGIN_T + ph + 16}" '
                   f'text-anchor="middle" font-family="sans-serif" '
                   f'font-size="11" fill="#444444">{v:g}</text>')
    for v in _ticks(y0, y1):
        py = sy(v)
        out.append(f'<line x1="{MARGIN_L}" y1="{py:.2f}" '
                   f'x2="{MARGIN_L + pw}" y2="{py:.2f}" stroke="#dddddd" '
                   f'stroke-width="1"/>')
        out.append(f'<text x="{MARGIN_L - 6}" y="{py + 4:.2f}" '
                   f'text-anchor="end" font-family="sans-serif" '
                   f'font-size="11" fill="#444444">{v:g}</text>')

    out.append(f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" '
               f'height="{ph}" fill="none" stroke="#888888" stroke-width="1"/>')

    for i, ((t, y), s) in enumerate(zip(finite, series)):
        d = _path_d([sx(v) for v in t], [sy(v) for v in y])
        if not d:
            continue
        dash = ' stroke-dasharray="6 3"' if s.dashed else ""
        out.append(f'<path d="{d}" fill="none" '
                   f'stroke="{PALETTE[i % len(PALETTE)]}" '
                   f'stroke-width="1.5"{dash}/>')

    lx = MARGIN_L + pw - 150
    ly = MARGIN_T + 10
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        dash = ' stroke-dasharray="6 3"' if s.dashed else ""
        out.append(f'<line x1="{lx}" y1="{ly + 14 * i}" x2="{lx + 22}" '
                   f'y2="{ly + 14 * i}" stroke="{color}" '
                   f'stroke-width="1.5"{dash}/>')
        out.append(f'<text x="{lx + 28}" y="{ly + 14 * i + 4}" '
                   f'font-family="sans-serif" font-size="11" '
                   f'fill="#222222">{_esc(s.label)}</text>')

    if title:
        out.append(f'<text x="{width / 2:.2f}" y="19" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="13" '
                   f'fill="#111111">{_esc(title)}</text>')
    out.append(f'<text x="14" y="{MARGIN_T + ph / 2:.2f}" '
               f'text-anchor="middle" font-family="sans-serif" font-size="12" '
               f'fill="#222222" transform="rotate(-90 14 '
               f'{MARGIN_T + ph / 2:.2f})">{_esc(ylabel)}</text>')
    out.append(f'<text x="{MARGIN_L + pw / 2:.2f}" y="{height - 8}" '
               f'text-anchor="middle" font-family="sans-serif" font-size="12" '
               f'fill="#222222">time [s]</text>')
    out.append("</svg>")

    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def _esc(text: str) -> str:
    return (str(text).replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;"))
