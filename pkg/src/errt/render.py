"""Deterministic SVG rendering of environments, trees and paths.

2D maps are drawn directly; 3D maps as three axis-aligned projections
(xy, xz, yz) side by side.
"""
from __future__ import annotations

import itertools
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull

from . import kernels
from .geometry import Environment

PANEL = 400.0
PAD = 10.0


def _f(x: float) -> str:
    return f"{x:.3f}"


class _Panel:
    def __init__(self, env: Environment, axes: tuple[int, int], x0: float):
        self.axes = axes
        self.lo = env.lo[list(axes)]
        span = (env.hi - env.lo)[list(axes)]
        self.scale = (PANEL - 2 * PAD) / float(span.max())
        self.x0 = x0
        self.h = PANEL

    def xy(self, q) -> tuple[float, float]:
        p = np.asarray(q, dtype=float)[list(self.axes)]
        x = self.x0 + PAD + (p[0] - self.lo[0]) * self.scale
        y = self.h - PAD - (p[1] - self.lo[1]) * self.scale
        return x, y


def _obstacle_shapes(env: Environment, panel: _Panel) -> list[str]:
    out = []
    for i in range(len(env.obstacles)):
        if env.kind[i] == kernels.SPHERE:
            x, y = panel.xy(env.centers[i])
            out.append(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="{_f(env.half[i, 0] * panel.scale)}" class="obs"/>')
            continue
        signs = np.array(list(itertools.product((-1.0, 1.0), repeat=env.dim)))
        corners = env.centers[i] + (signs * env.half[i]) @ env.rot[i].T
        P = np.array([panel.xy(c) for c in corners])
        hull = ConvexHull(P)
        pts = " ".join(f"{_f(P[v, 0])},{_f(P[v, 1])}" for v in hull.vertices)
        out.append(f'<polygon points="{pts}" class="obs"/>')
    return out


def render_svg(env: Environment, out, trees=(), path=None, q_start=None, q_goal=None) -> str:
    """Write an SVG and return its text. Identical inputs give identical bytes."""
    projections = [(0, 1)] if env.dim == 2 else [(0, 1), (0, 2), (1, 2)]
    width = PANEL * len(projections)
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" height="{_f(PANEL)}" '
        f'viewBox="0 0 {_f(width)} {_f(PANEL)}">',
        "<style>.obs{fill:#888;stroke:none}.edge{stroke:#3a7;stroke-width:0.6}"
        ".path{fill:none;stroke:#d22;stroke-width:2}.frame{fill:none;stroke:#000}</style>",
    ]
    for k, axes in enumerate(projections):
        panel = _Panel(env, axes, k * PANEL)
        a, b = panel.xy(env.lo), panel.xy(env.hi)
        lines.append(f'<rect x="{_f(a[0])}" y="{_f(b[1])}" width="{_f(b[0] - a[0])}" '
                     f'height="{_f(a[1] - b[1])}" class="frame"/>')
        lines.extend(_obstacle_shapes(env, panel))
        for tree in trees:
            for p, c in tree.edges():
                x1, y1 = panel.xy(p)
                x2, y2 = panel.xy(c)
                lines.append(f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" class="edge"/>')
        if path is not None and len(path):
            pts = " ".join(f"{_f(x)},{_f(y)}" for x, y in (panel.xy(q) for q in path))
            lines.append(f'<polyline points="{pts}" class="path"/>')
        for q, color in ((q_start, "#00c"), (q_goal, "#c80")):
            if q is not None:
                x, y = panel.xy(q)
                lines.append(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="4.000" fill="{color}"/>')
    lines.append("</svg>")
    text = "\n".join(lines) + "\n"
    Path(out).write_text(text)
    return text
