"""Dependency-free SVG line charts (log-scale y) for convergence traces."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _fmt(v):
    return f"{v:.2f}"


def svg_chart(series, title="", xlabel="epoch", ylabel="log10 MSPBE gap",
              width=720, height=440, floor=1e-16):
    """Render ``{label: (x, y)}`` as an SVG string with ``log10(y)`` on the y-axis."""
    left, right, top, bottom = 70, 170, 40, 50
    pw, ph = width - left - right, height - top - bottom
    curves = {}
    for label, (x, y) in series.items():
        x = np.asarray(x, dtype=float)
        y = np.log10(np.maximum(np.asarray(y, dtype=float), floor))
        ok = np.isfinite(x) & np.isfinite(y)
        if ok.any():
            curves[label] = (x[ok], y[ok])
    if curves:
        xmin = min(c[0].min() for c in curves.values())
        xmax = max(c[0].max() for c in curves.values())
        ymin = math.floor(min(c[1].min() for c in curves.values()))
        ymax = math.ceil(max(c[1].max() for c in curves.values()))
    else:
        xmin, xmax, ymin, ymax = 0.0, 1.0, -1, 0
    if xmax <= xmin:
        xmax = xmin + 1.0
    if ymax <= ymin:
        ymax = ymin + 1

    def px(x):
        return left + (x - xmin) / (xmax - xmin) * pw

    def py(y):
        return top + (ymax - y) / (ymax - ymin) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" style="font-family:sans-serif;font-size:12px">',
           f'<rect x="0" y="0" width="{width}" height="{height}" style="fill:#ffffff"/>',
           f'<text x="{left + pw / 2:.1f}" y="22" style="text-anchor:middle;font-size:14px">'
           f'{escape(title)}</text>']
    step = max(1, (ymax - ymin) // 8)
    for yv in range(ymin, ymax + 1, step):
        out.append(f'<line x1="{left}" y1="{_fmt(py(yv))}" x2="{left + pw}" '
                   f'y2="{_fmt(py(yv))}" style="stroke:#e0e0e0;stroke-width:1"/>')
        out.append(f'<text x="{left - 6}" y="{_fmt(py(yv) + 4)}" '
                   f'style="text-anchor:end">{yv}</text>')
    for k in range(6):
        xv = xmin + k * (xmax - xmin) / 5
        out.append(f'<text x="{_fmt(px(xv))}" y="{top + ph + 18}" '
                   f'style="text-anchor:middle">{xv:.4g}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" '
               'style="fill:none;stroke:#333333;stroke-width:1"/>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" '
               f'style="text-anchor:middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" style="text-anchor:middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    for n, (label, (x, y)) in enumerate(curves.items()):
        color = PALETTE[n % len(PALETTE)]
        if x.size > 2000:
            idx = np.unique(np.linspace(0, x.size - 1, 2000).astype(int))
            x, y = x[idx], y[idx]
        pts = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(x, y))
        out.append(f'<polyline points="{pts}" style="fill:none;stroke:{color};'
                   'stroke-width:1.5"/>')
        ly = top + 14 + 18 * n
        out.append(f'<line x1="{left + pw + 12}" y1="{ly}" x2="{left + pw + 32}" y2="{ly}" '
                   f'style="stroke:{color};stroke-width:2"/>')
        out.append(f'<text x="{left + pw + 38}" y="{ly + 4}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, series, **kw):
    with open(path, "w") as fh:
        fh.write(svg_chart(series, **kw))
