"""Tiny SVG writer: line plots, log-log plots and heatmaps."""
from __future__ import annotations

import math
from html import escape

import numpy as np

W, H, PAD = 480, 320, 48
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n)


class Axes:
    def __init__(self, x0, y0, w, h, xlim, ylim, logx=False, logy=False, title="", xlabel="", ylabel=""):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.logx, self.logy = logx, logy
        self.xlim = tuple(map(self._tx, xlim))
        self.ylim = tuple(map(self._ty, ylim))
        if self.xlim[1] <= self.xlim[0]:
            self.xlim = (self.xlim[0] - 0.5, self.xlim[0] + 0.5)
        if self.ylim[1] <= self.ylim[0]:
            self.ylim = (self.ylim[0] - 0.5, self.ylim[0] + 0.5)
        self.parts = []
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel

    def _tx(self, x):
        return math.log10(x) if self.logx else float(x)

    def _ty(self, y):
        return math.log10(y) if self.logy else float(y)

    def px(self, x):
        a, b = self.xlim
        return self.x0 + (self._tx(x) - a) / (b - a) * self.w

    def py(self, y):
        a, b = self.ylim
        return self.y0 + self.h - (self._ty(y) - a) / (b - a) * self.h

    def line(self, xs, ys, color=PALETTE[0], width=1.2, dots=False):
        pts = [(self.px(x), self.py(y)) for x, y in zip(xs, ys)
               if np.isfinite(x) and np.isfinite(y) and (not self.logy or y > 0) and (not self.logx or x > 0)]
        if len(pts) > 1:
            d = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
            self.parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{d}"/>')
        if dots:
            self.parts += [f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2.5" fill="{color}"/>' for x, y in pts]

    def heatmap(self, values, extent, cmap=None):
        ny_, nx_ = values.shape[1], values.shape[0]
        vmax = float(values.max()) or 1.0
        cw, ch = self.w / nx_, self.h / ny_
        for i in range(nx_):
            for k in range(ny_):
                z = values[i, k] / vmax
                if z <= 1e-3:
                    continue
                r, g, b = _viridis(z)
                self.parts.append(f'<rect x="{self.x0 + i * cw:.2f}" y="{self.y0 + self.h - (k + 1) * ch:.2f}" '
                                  f'width="{cw + 0.05:.2f}" height="{ch + 0.05:.2f}" fill="rgb({r},{g},{b})"/>')

    def render(self) -> str:
        out = [f'<rect x="{self.x0}" y="{self.y0}" width="{self.w}" height="{self.h}" fill="none" stroke="#444"/>']
        out += self.parts
        for t in _ticks(*self.xlim):
            x = self.x0 + (t - self.xlim[0]) / (self.xlim[1] - self.xlim[0]) * self.w
            lab = f"{10 ** t:.3g}" if self.logx else f"{t:.3g}"
            out.append(f'<text x="{x:.1f}" y="{self.y0 + self.h + 14}" font-size="10" text-anchor="middle">{lab}</text>')
        for t in _ticks(*self.ylim):
            y = self.y0 + self.h - (t - self.ylim[0]) / (self.ylim[1] - self.ylim[0]) * self.h
            lab = f"{10 ** t:.3g}" if self.logy else f"{t:.3g}"
            out.append(f'<text x="{self.x0 - 4}" y="{y + 3:.1f}" font-size="10" text-anchor="end">{lab}</text>')
        if self.title:
            out.append(f'<text x="{self.x0 + self.w / 2}" y="{self.y0 - 8}" font-size="12" text-anchor="middle">{escape(self.title)}</text>')
        if self.xlabel:
            out.append(f'<text x="{self.x0 + self.w / 2}" y="{self.y0 + self.h + 30}" font-size="11" text-anchor="middle">{escape(self.xlabel)}</text>')
        if self.ylabel:
            out.append(f'<text x="{self.x0 - 36}" y="{self.y0 + self.h / 2}" font-size="11" text-anchor="middle" '
                       f'transform="rotate(-90 {self.x0 - 36} {self.y0 + self.h / 2})">{escape(self.ylabel)}</text>')
        return "\n".join(out)


def _viridis(z):
    # coarse 3-stop approximation, enough for a quick look
    stops = ((68, 1, 84), (33, 145, 140), (253, 231, 37))
    z = min(max(z, 0.0), 1.0) * 2
    i = min(int(z), 1)
    f = z - i
    return tuple(int(stops[i][c] + f * (stops[i + 1][c] - stops[i][c])) for c in range(3))


def _limits(arrs, log=False):
    v = np.concatenate([np.asarray(a, float).ravel() for a in arrs])
    v = v[np.isfinite(v)]
    if log:
        v = v[v > 0]
    if v.size == 0:
        return (1.0, 10.0) if log else (0.0, 1.0)
    return float(v.min()), float(v.max())


def document(axes, width=W, height=H) -> str:
    body = "\n".join(a.render() for a in axes)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'font-family="sans-serif">\n<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n')


def line_plot(path, curves, *, title="", xlabel="", ylabel="", logx=False, logy=False, dots=False):
    """curves: list of (xs, ys) pairs."""
    xl = _limits([c[0] for c in curves], logx)
    yl = _limits([c[1] for c in curves], logy)
    ax = Axes(PAD + 10, PAD - 20, W - 2 * PAD, H - 2 * PAD, xl, yl, logx, logy, title, xlabel, ylabel)
    for k, (xs, ys) in enumerate(curves):
        ax.line(xs, ys, PALETTE[k % len(PALETTE)], dots=dots)
    with open(path, "w") as fh:
        fh.write(document([ax]))


def heatmap(path, density, *, title=""):
    g = density.grid
    ax = Axes(PAD + 10, PAD - 20, W - 2 * PAD, H - 2 * PAD, (g.x_min, g.x_max), (g.v_min, g.v_max),
              title=title, xlabel="x", ylabel="v")
    ax.heatmap(density.values, (g.x_min, g.x_max, g.v_min, g.v_max))
    with open(path, "w") as fh:
        fh.write(document([ax]))


def panel(path, traces, ncols=3, *, xlabel="t", ylabel="mean v"):
    """traces: list of (title, [(xs, ys), ...])."""
    nrows = max(1, math.ceil(len(traces) / ncols))
    cw, chh = 300, 200
    axes = []
    for k, (title, curves) in enumerate(traces):
        r, c = divmod(k, ncols)
        xl = _limits([q[0] for q in curves])
        yl = _limits([q[1] for q in curves])
        ax = Axes(c * cw + 50, r * chh + 25, cw - 70, chh - 60, xl, yl, title=title, xlabel=xlabel, ylabel=ylabel)
        for i, (xs, ys) in enumerate(curves):
            ax.line(xs, ys, PALETTE[i % len(PALETTE)], width=0.8)
        axes.append(ax)
    with open(path, "w") as fh:
        fh.write(document(axes, ncols * cw, nrows * chh))
