"""Minimal static SVG plots (no plotting dependency).

Coordinates are written with fixed precision so the same data always gives
the same bytes.
"""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

W, H = 640, 400
ML, MR, MT, MB = 60, 20, 30, 45
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _num(v: float) -> str:
    return f"{v:.3g}"


class _Canvas:
    def __init__(self, xlim, ylim, title="", xlabel="", ylabel="", xticks=True):
        self.xticks = xticks
        self.x0, self.x1 = _pad(xlim)
        self.y0, self.y1 = _pad(ylim)
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
            f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
            f'<rect width="{W}" height="{H}" fill="white"/>',
        ]
        self._axes(title, xlabel, ylabel)

    def sx(self, x):
        return ML + (x - self.x0) / (self.x1 - self.x0) * (W - ML - MR)

    def sy(self, y):
        return H - MB - (y - self.y0) / (self.y1 - self.y0) * (H - MT - MB)

    def _axes(self, title, xlabel, ylabel):
        p = self.parts
        p.append(f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" '
                 'fill="none" stroke="black"/>')
        for t in np.linspace(self.x0, self.x1, 5) if self.xticks else ():
            x = _fmt(self.sx(t))
            p.append(f'<line x1="{x}" y1="{H - MB}" x2="{x}" y2="{H - MB + 4}" stroke="black"/>')
            p.append(f'<text x="{x}" y="{H - MB + 16}" text-anchor="middle">{_num(t)}</text>')
        for t in np.linspace(self.y0, self.y1, 5):
            y = _fmt(self.sy(t))
            p.append(f'<line x1="{ML - 4}" y1="{y}" x2="{ML}" y2="{y}" stroke="black"/>')
            p.append(f'<text x="{ML - 6}" y="{y}" text-anchor="end" '
                     f'dominant-baseline="middle">{_num(t)}</text>')
        if title:
            p.append(f'<text x="{W / 2}" y="18" text-anchor="middle" '
                     f'font-size="13">{escape(title)}</text>')
        if xlabel:
            p.append(f'<text x="{(ML + W - MR) / 2}" y="{H - 8}" '
                     f'text-anchor="middle">{escape(xlabel)}</text>')
        if ylabel:
            p.append(f'<text x="14" y="{(MT + H - MB) / 2}" text-anchor="middle" '
                     f'transform="rotate(-90 14 {(MT + H - MB) / 2})">{escape(ylabel)}</text>')

    def polyline(self, xs, ys, color, width=1.0, dash=None):
        pts = " ".join(f"{_fmt(self.sx(a))},{_fmt(self.sy(b))}" for a, b in zip(xs, ys))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                          f'stroke-width="{width}"{extra}/>')

    def segment(self, xa, ya, xb, yb, color, width=1.0):
        self.parts.append(f'<line x1="{_fmt(self.sx(xa))}" y1="{_fmt(self.sy(ya))}" '
                          f'x2="{_fmt(self.sx(xb))}" y2="{_fmt(self.sy(yb))}" '
                          f'stroke="{color}" stroke-width="{width}"/>')

    def dot(self, x, y, color, r=1.5):
        self.parts.append(f'<circle cx="{_fmt(self.sx(x))}" cy="{_fmt(self.sy(y))}" '
                          f'r="{r}" fill="{color}"/>')

    def rect(self, xa, ya, xb, yb, color):
        x, y = self.sx(xa), self.sy(max(ya, yb))
        w, h = self.sx(xb) - x, self.sy(min(ya, yb)) - y
        self.parts.append(f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(w)}" '
                          f'height="{_fmt(h)}" fill="{color}" fill-opacity="0.35" '
                          f'stroke="{color}"/>')

    def legend(self, labels):
        for i, lab in enumerate(labels):
            y = MT + 14 + 14 * i
            c = PALETTE[i % len(PALETTE)]
            self.parts.append(f'<line x1="{ML + 10}" y1="{y}" x2="{ML + 28}" y2="{y}" '
                              f'stroke="{c}" stroke-width="2"/>')
            self.parts.append(f'<text x="{ML + 32}" y="{y}" '
                              f'dominant-baseline="middle">{escape(lab)}</text>')

    def save(self, path):
        Path(path).write_text("\n".join(self.parts + ["</svg>"]) + "\n", encoding="utf-8")


def _pad(lim):
    lo, hi = float(lim[0]), float(lim[1])
    if not hi > lo:
        lo, hi = lo - 0.5, hi + 0.5
    d = 0.04 * (hi - lo)
    return lo - d, hi + d


def interval_plot(path, lo, mid, hi, hline=None, title="", ylabel=""):
    """Vertical interval per index with its midpoint; optional horizontal reference."""
    lo, mid, hi = (np.asarray(a, float) for a in (lo, mid, hi))
    idx = np.arange(1, lo.size + 1)
    ymin, ymax = lo.min(), hi.max()
    if hline is not None:
        ymin, ymax = min(ymin, hline), max(ymax, hline)
    c = _Canvas((1, max(lo.size, 2)), (ymin, ymax), title, "index (sorted)", ylabel)
    for i, a, m, b in zip(idx, lo, mid, hi):
        c.segment(i, a, i, b, "#999999")
        c.dot(i, m, PALETTE[0], 1.2)
    if hline is not None:
        c.segment(c.x0, hline, c.x1, hline, PALETTE[1], 1.5)
    c.save(path)


def qq_plot(path, p, title=""):
    """Sorted percentiles against uniform plotting positions."""
    p = np.sort(np.asarray(p, float))
    u = (np.arange(1, p.size + 1) - 0.5) / p.size
    c = _Canvas((0, 1), (0, 1), title, "uniform quantile", "sample percentile")
    c.polyline([0, 1], [0, 1], "#999999", 1.0, "4 3")
    for a, b in zip(u, p):
        c.dot(a, b, PALETTE[0])
    c.save(path)


def line_plot(path, x, series: dict, title="", xlabel="", ylabel=""):
    x = np.asarray(x, float)
    ys = [np.asarray(v, float) for v in series.values()]
    c = _Canvas((x.min(), x.max()), (min(y.min() for y in ys), max(y.max() for y in ys)),
                title, xlabel, ylabel)
    for i, y in enumerate(ys):
        c.polyline(x, y, PALETTE[i % len(PALETTE)], 0.8)
    if len(ys) > 1:
        c.legend(list(series))
    c.save(path)


def box_plot(path, groups: dict, title="", ylabel=""):
    """Tukey boxes (quartiles, 1.5 IQR whiskers) per labelled group."""
    labels = list(groups)
    vals = [np.asarray(groups[k], float) for k in labels]
    allv = np.concatenate(vals)
    c = _Canvas((0.5, len(labels) + 0.5), (allv.min(), allv.max()), title, "", ylabel,
                xticks=False)
    for i, (lab, v) in enumerate(zip(labels, vals), 1):
        q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
        iqr = q3 - q1
        wlo = v[v >= q1 - 1.5 * iqr].min()
        whi = v[v <= q3 + 1.5 * iqr].max()
        col = PALETTE[i % len(PALETTE)]
        c.rect(i - 0.25, q1, i + 0.25, q3, col)
        c.segment(i - 0.25, med, i + 0.25, med, "black", 2)
        c.segment(i, q3, i, whi, "black")
        c.segment(i, q1, i, wlo, "black")
        for o in v[(v < wlo) | (v > whi)]:
            c.dot(i, o, "black")
        c.parts.append(f'<text x="{_fmt(c.sx(i))}" y="{H - MB + 30}" '
                       f'text-anchor="middle">{escape(str(lab))}</text>')
    c.save(path)


def bar_plot(path, labels, series: dict, title="", ylabel=""):
    """Grouped bars: one group per label, one bar per series."""
    k = len(series)
    c = _Canvas((0.5, len(labels) + 0.5),
                (0, max(float(np.max(v)) for v in series.values())), title, "", ylabel,
                xticks=False)
    width = 0.8 / max(k, 1)
    for s, (name, v) in enumerate(series.items()):
        col = PALETTE[s % len(PALETTE)]
        for i, h in enumerate(np.asarray(v, float), 1):
            xa = i - 0.4 + s * width
            c.rect(xa, 0, xa + width, h, col)
    for i, lab in enumerate(labels, 1):
        c.parts.append(f'<text x="{_fmt(c.sx(i))}" y="{H - MB + 30}" text-anchor="middle" '
                       f'font-size="8">{escape(str(lab))}</text>')
    if k > 1:
        c.legend(list(series))
    c.save(path)
