"""Tiny deterministic SVG emitter for line and bar charts.

Coordinates are printed with fixed precision so identical data always gives
byte-identical files.
"""

from __future__ import annotations

import math
from html import escape
from pathlib import Path

PALETTE = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
]


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _nice_ticks(lo: float, hi: float, count: int = 5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


class Chart:
    """A single panel with axes, ticks, and any number of series."""

    def __init__(self, title="", xlabel="", ylabel="", width=640, height=400, logx=False):
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.width, self.height = width, height
        self.logx = logx
        self.margin = (60, 20, 40, 50)  # left, right, top, bottom
        self._lines = []
        self._bars = None

    def line(self, xs, ys, label=None, color=None):
        self._lines.append((list(map(float, xs)), list(map(float, ys)), label, color))
        return self

    def bars(self, xs, heights, color=PALETTE[0]):
        self._bars = (list(map(float, xs)), list(map(float, heights)), color)
        return self

    def _tx(self, x):
        return math.log10(x) if self.logx else x

    def _limits(self):
        xs, ys = [], []
        for lx, ly, _, _ in self._lines:
            xs += lx
            ys += ly
        if self._bars:
            bx, bh, _ = self._bars
            xs += [v - 0.5 for v in bx] + [v + 0.5 for v in bx]
            ys += bh + [0.0]
        finite_y = [y for y in ys if math.isfinite(y)]
        if not xs or not finite_y:
            return (0.0, 1.0), (0.0, 1.0)
        tx = [self._tx(x) for x in xs]
        x0, x1 = min(tx), max(tx)
        y0, y1 = min(finite_y), max(finite_y)
        if x1 == x0:
            x0, x1 = x0 - 1, x1 + 1
        if y1 == y0:
            y0, y1 = y0 - 1, y1 + 1
        pad = 0.05 * (y1 - y0)
        return (x0, x1), (y0 - pad, y1 + pad)

    def render(self) -> str:
        (x0, x1), (y0, y1) = self._limits()
        left, right, top, bottom = self.margin
        pw = self.width - left - right
        ph = self.height - top - bottom

        def px(x):
            return left + (self._tx(x) - x0) / (x1 - x0) * pw

        def py(y):
            return top + (1 - (y - y0) / (y1 - y0)) * ph

        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
            f'viewBox="0 0 {self.width} {self.height}" font-family="sans-serif" font-size="11">',
            f'<rect x="0" y="0" width="{self.width}" height="{self.height}" fill="white"/>',
            f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        ]
        for t in _nice_ticks(y0, y1):
            y = py(t)
            out.append(f'<line x1="{left - 4}" y1="{_fmt(y)}" x2="{left}" y2="{_fmt(y)}" stroke="black"/>')
            out.append(f'<text x="{left - 6}" y="{_fmt(y + 4)}" text-anchor="end">{t:g}</text>')
        for t in _nice_ticks(x0, x1):
            x = left + (t - x0) / (x1 - x0) * pw
            label = f"{10 ** t:g}" if self.logx else f"{t:g}"
            out.append(f'<line x1="{_fmt(x)}" y1="{top + ph}" x2="{_fmt(x)}" y2="{top + ph + 4}" stroke="black"/>')
            out.append(f'<text x="{_fmt(x)}" y="{top + ph + 16}" text-anchor="middle">{label}</text>')
        if self._bars:
            bx, bh, color = self._bars
            base = py(max(y0, 0.0))
            for x, h in zip(bx, bh):
                xa, xb = px(x - 0.45), px(x + 0.45)
                ya = py(h)
                out.append(
                    f'<rect x="{_fmt(xa)}" y="{_fmt(min(ya, base))}" width="{_fmt(max(xb - xa, 0.5))}" '
                    f'height="{_fmt(abs(base - ya))}" fill="{color}"/>'
                )
        for i, (lx, ly, label, color) in enumerate(self._lines):
            color = color or PALETTE[i % len(PALETTE)]
            pts = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(lx, ly) if math.isfinite(y))
            if len(lx) == 1:
                out.append(f'<circle cx="{_fmt(px(lx[0]))}" cy="{_fmt(py(ly[0]))}" r="3" fill="{color}"/>')
            else:
                out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
            if label:
                out.append(
                    f'<text x="{left + pw - 4}" y="{top + 14 + 13 * i}" text-anchor="end" fill="{color}">'
                    f"{escape(label)}</text>"
                )
        out.append(f'<text x="{self.width / 2:.2f}" y="{top - 14}" text-anchor="middle" font-size="13">{escape(self.title)}</text>')
        out.append(f'<text x="{left + pw / 2:.2f}" y="{self.height - 10}" text-anchor="middle">{escape(self.xlabel)}</text>')
        out.append(
            f'<text x="14" y="{top + ph / 2:.2f}" text-anchor="middle" '
            f'transform="rotate(-90 14 {top + ph / 2:.2f})">{escape(self.ylabel)}</text>'
        )
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.render())
