"""Minimal deterministic SVG charts: lines with bands, bars and heatmaps.

Every number is written with a fixed precision so identical inputs give
identical bytes.
"""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
W, H = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 150, 40, 50


def _f(x: float) -> str:
    return f"{x:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> list:
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def _label(x: float) -> str:
    return f"{x:.4g}"


class _Frame:
    def __init__(self, x_lo, x_hi, y_lo, y_hi):
        if y_hi == y_lo:
            y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
        if x_hi == x_lo:
            x_lo, x_hi = x_lo - 1.0, x_hi + 1.0
        self.x_lo, self.x_hi, self.y_lo, self.y_hi = x_lo, x_hi, y_lo, y_hi

    def x(self, v):
        return LEFT + (v - self.x_lo) / (self.x_hi - self.x_lo) * (W - LEFT - RIGHT)

    def y(self, v):
        return H - BOTTOM - (v - self.y_lo) / (self.y_hi - self.y_lo) * (H - TOP - BOTTOM)


def _header(title: str) -> list:
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
            f'<rect width="{W}" height="{H}" fill="white"/>',
            f'<text x="{W // 2}" y="22" text-anchor="middle" font-family="sans-serif" font-size="14">'
            f'{escape(title)}</text>']


def _axes(fr: _Frame, xlabel: str, ylabel: str) -> list:
    x0, x1, y0, y1 = fr.x(fr.x_lo), fr.x(fr.x_hi), fr.y(fr.y_lo), fr.y(fr.y_hi)
    out = [f'<path d="M{_f(x0)} {_f(y1)} L{_f(x0)} {_f(y0)} L{_f(x1)} {_f(y0)}" stroke="black" fill="none"/>']
    for t in _ticks(fr.x_lo, fr.x_hi):
        out.append(f'<text x="{_f(fr.x(t))}" y="{_f(y0 + 16)}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="10">{_label(t)}</text>')
    for t in _ticks(fr.y_lo, fr.y_hi):
        out.append(f'<text x="{_f(x0 - 6)}" y="{_f(fr.y(t) + 3)}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="10">{_label(t)}</text>')
    out.append(f'<text x="{_f((x0 + x1) / 2)}" y="{H - 12}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="12">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{_f((y0 + y1) / 2)}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="12" transform="rotate(-90 16 {_f((y0 + y1) / 2)})">{escape(ylabel)}</text>')
    return out


def line_chart(series, title: str = "", xlabel: str = "", ylabel: str = "", notes=()) -> str:
    """``series``: iterable of ``(label, x, mean, std_or_None)``; bands are mean +- std."""
    series = [(lab, np.asarray(x, float), np.asarray(m, float), None if s is None else np.asarray(s, float))
              for lab, x, m, s in series]
    if not series:
        raise ValueError("nothing to plot")
    lows = [np.nanmin(m - (0 if s is None else s)) for _, _, m, s in series]
    highs = [np.nanmax(m + (0 if s is None else s)) for _, _, m, s in series]
    xs = np.concatenate([x for _, x, _, _ in series])
    fr = _Frame(float(xs.min()), float(xs.max()), float(min(lows)), float(max(highs)))
    out = _header(title) + _axes(fr, xlabel, ylabel)
    for k, (lab, x, m, s) in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        ok = ~np.isnan(m)
        x, m = x[ok], m[ok]
        if s is not None:
            s = s[ok]
            upper = " ".join(f"{_f(fr.x(a))},{_f(fr.y(b))}" for a, b in zip(x, m + s))
            lower = " ".join(f"{_f(fr.x(a))},{_f(fr.y(b))}" for a, b in zip(x[::-1], (m - s)[::-1]))
            out.append(f'<polygon points="{upper} {lower}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        pts = " ".join(f"{_f(fr.x(a))},{_f(fr.y(b))}" for a, b in zip(x, m))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = TOP + 16 * k + 10
        out.append(f'<rect x="{W - RIGHT + 10}" y="{ly - 8}" width="10" height="10" fill="{color}"/>')
        out.append(f'<text x="{W - RIGHT + 24}" y="{ly + 1}" font-family="sans-serif" font-size="11">'
                   f'{escape(lab)}</text>')
    for k, note in enumerate(notes):
        out.append(f'<text x="{W - RIGHT + 10}" y="{TOP + 16 * (len(series) + k) + 20}" font-family="sans-serif" '
                   f'font-size="10">{escape(note)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def bar_chart(labels, values, title: str = "", ylabel: str = "", errors=None) -> str:
    values = np.asarray(values, float)
    if len(labels) != len(values) or len(values) == 0:
        raise ValueError("labels and values must be nonempty and equally long")
    err = np.zeros_like(values) if errors is None else np.asarray(errors, float)
    top = float(np.max(values + err))
    fr = _Frame(0.0, float(len(values)), min(0.0, float(np.min(values - err))), top if top > 0 else 1.0)
    out = _header(title)
    x0, y0 = fr.x(0), fr.y(fr.y_lo)
    out.append(f'<path d="M{_f(x0)} {_f(fr.y(fr.y_hi))} L{_f(x0)} {_f(y0)} L{_f(fr.x(fr.x_hi))} {_f(y0)}" '
               f'stroke="black" fill="none"/>')
    for t in _ticks(fr.y_lo, fr.y_hi):
        out.append(f'<text x="{_f(x0 - 6)}" y="{_f(fr.y(t) + 3)}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="10">{_label(t)}</text>')
    out.append(f'<text x="16" y="{H // 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
               f'transform="rotate(-90 16 {H // 2})">{escape(ylabel)}</text>')
    base = fr.y(0.0)
    for k, (lab, v, e) in enumerate(zip(labels, values, err)):
        xa, xb = fr.x(k + 0.15), fr.x(k + 0.85)
        ya = fr.y(v)
        out.append(f'<rect x="{_f(xa)}" y="{_f(min(ya, base))}" width="{_f(xb - xa)}" '
                   f'height="{_f(abs(base - ya))}" fill="{PALETTE[k % len(PALETTE)]}"/>')
        if e > 0:
            xm = (xa + xb) / 2
            out.append(f'<path d="M{_f(xm)} {_f(fr.y(v - e))} L{_f(xm)} {_f(fr.y(v + e))}" stroke="black"/>')
        out.append(f'<text x="{_f((xa + xb) / 2)}" y="{_f(y0 + 16)}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="10">{escape(str(lab))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heatmap(grid, title: str = "", lo: float | None = None, hi: float | None = None) -> str:
    """Cells with NaN are drawn dark grey (walls); values map white -> blue."""
    grid = np.asarray(grid, float)
    finite = grid[np.isfinite(grid)]
    lo = float(finite.min()) if lo is None and finite.size else (0.0 if lo is None else lo)
    hi = float(finite.max()) if hi is None and finite.size else (1.0 if hi is None else hi)
    rows, cols = grid.shape
    cell = min((W - 2 * LEFT) / cols, (H - TOP - BOTTOM) / rows)
    ox, oy = (W - cell * cols) / 2, TOP
    out = _header(title)
    for r in range(rows):
        for c in range(cols):
            v = grid[r, c]
            if np.isnan(v):
                fill = "#404040"
            else:
                t = 0.0 if hi == lo else (v - lo) / (hi - lo)
                shade = int(round(255 * (1.0 - float(np.clip(t, 0.0, 1.0)))))
                fill = f"#{shade:02x}{shade:02x}ff"
            out.append(f'<rect x="{_f(ox + c * cell)}" y="{_f(oy + r * cell)}" width="{_f(cell)}" '
                       f'height="{_f(cell)}" fill="{fill}" stroke="#cccccc" stroke-width="0.5"/>')
    out.append(f'<text x="{W // 2}" y="{H - 12}" text-anchor="middle" font-family="sans-serif" font-size="11">'
               f'scale {_label(lo)} (white) to {_label(hi)} (blue)</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
