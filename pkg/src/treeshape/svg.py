"""Plain SVG 1.1 pictures of trees and densities (d = 2 only).

Output is a deterministic function of the input: fixed element order and
fixed number formatting.  Axes are drawn as one ``<path>`` so every
``<line>`` in the document is a tree edge.
"""

from __future__ import annotations

from typing import Optional
from xml.sax.saxutils import escape

import numpy as np

from .irrigation import LEAF, FluxTree
from .measure import DiscreteMeasure, GridDensity

__all__ = ["render_svg"]


def _f(v: float) -> str:
    s = f"{v:.4f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def render_svg(tree: Optional[FluxTree] = None, density: Optional[GridDensity] = None,
               alpha: float = 1.0, measure: Optional[DiscreteMeasure] = None,
               size: int = 480, max_stroke: float = 8.0, title: str = "") -> str:
    """Draw an optional grayscale density with an optional tree on top.

    Edge stroke widths are ``max_stroke * flux**alpha / max(flux**alpha)``.
    Atoms of ``measure`` are drawn as small circles.
    """
    for obj, name in ((tree, "tree"), (density, "density"), (measure, "measure")):
        d = None if obj is None else (obj.tree.d if name == "tree" else obj.d)
        if d is not None and d != 2:
            raise ValueError(f"only two-dimensional {name}s can be drawn (got d = {d})")

    pts = [np.zeros((1, 2))]
    if density is not None:
        pts.append(density.domain.corners())
    if tree is not None:
        pts.append(tree.tree.positions)
    if measure is not None and len(measure):
        pts.append(measure.positions)
    P = np.vstack(pts)
    lo, hi = P.min(axis=0), P.max(axis=0)
    span = hi - lo
    if not np.all(span > 0):
        pad = np.where(span > 0, 0, 1.0)
        lo, hi = lo - pad, hi + pad
        span = hi - lo
    margin = 0.05 * span.max()
    lo, hi = lo - margin, hi + margin
    scale = size / (hi - lo).max()
    W, H = (hi - lo) * scale

    def sx(x):
        return (x - lo[0]) * scale

    def sy(y):
        return (hi[1] - y) * scale

    out = ['<?xml version="1.0" encoding="UTF-8"?>',
           f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_f(W)}" '
           f'height="{_f(H)}" viewBox="0 0 {_f(W)} {_f(H)}">']
    if title:
        out.append(f"<title>{escape(title)}</title>")
    out.append(f'<rect x="0" y="0" width="{_f(W)}" height="{_f(H)}" fill="white"/>')

    if density is not None:
        out.append('<g id="density" stroke="none">')
        vmax = float(density.cells.max())
        w = density.cell_width
        x0, y0 = density.domain.lower
        if vmax > 0:
            for i in range(density.cells.shape[0]):
                for j in range(density.cells.shape[1]):
                    v = density.cells[i, j]
                    if v <= 0:
                        continue
                    g = int(round(255 * (1 - v / vmax)))
                    out.append(f'<rect x="{_f(sx(x0 + i * w[0]))}" y="{_f(sy(y0 + (j + 1) * w[1]))}" '
                               f'width="{_f(w[0] * scale)}" height="{_f(w[1] * scale)}" '
                               f'fill="rgb({g},{g},{g})"/>')
        out.append("</g>")

    ox, oy = sx(0.0), sy(0.0)
    out.append(f'<path id="axes" d="M 0 {_f(oy)} L {_f(W)} {_f(oy)} M {_f(ox)} 0 L {_f(ox)} {_f(H)}" '
               'stroke="#999999" stroke-width="0.5" fill="none"/>')

    if tree is not None and tree.tree.edges:
        t = tree.tree
        strength = np.asarray(tree.flux, dtype=float) ** alpha
        top = max(strength[c] for _, c in t.edges)
        out.append('<g id="tree" stroke="#2a7a3a" stroke-linecap="round">')
        for p, c in t.edges:
            a, b = t.positions[p], t.positions[c]
            width = max_stroke * strength[c] / top if top > 0 else 0.0
            out.append(f'<line x1="{_f(sx(a[0]))}" y1="{_f(sy(a[1]))}" x2="{_f(sx(b[0]))}" '
                       f'y2="{_f(sy(b[1]))}" stroke-width="{_f(width)}"/>')
        out.append("</g>")
        leaves = [i for i, k in enumerate(t.kinds) if k == LEAF]
        if leaves:
            out.append('<g id="leaves" fill="#c0392b">')
            for i in leaves:
                out.append(f'<circle cx="{_f(sx(t.positions[i][0]))}" '
                           f'cy="{_f(sy(t.positions[i][1]))}" r="2.5"/>')
            out.append("</g>")

    if measure is not None and len(measure):
        out.append('<g id="atoms" fill="none" stroke="#1f4e99">')
        for x in measure.positions:
            out.append(f'<circle cx="{_f(sx(x[0]))}" cy="{_f(sy(x[1]))}" r="4"/>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
