"""SVG figures, DOT automata and per-step covariance tables."""

from __future__ import annotations

import csv
import io
import math
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .geometry import Workspace, chi2_2dof_quantile
from .ltl.automaton import DFA

PX_PER_M = 100.0
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2")


def _ellipse(mean, cov, epsilon: float):
    lam, vec = np.linalg.eigh(0.5 * (np.asarray(cov) + np.asarray(cov).T))
    k = chi2_2dof_quantile(epsilon)
    radii = np.sqrt(np.maximum(lam, 0.0) * k)
    angle = math.degrees(math.atan2(vec[1, 1], vec[0, 1]))
    return radii[1], radii[0], angle


def trajectory_svg(workspace: Workspace, paths: Sequence[np.ndarray] = (), landmarks=(),
                   epsilon: float = 0.9) -> str:
    """SVG of the workspace with obstacles, regions, landmark ellipses and robot paths.

    ``paths`` holds one (T, 2) array per robot; ``landmarks`` holds
    ``(id, mean, cov)`` triples. One meter is 100 px.
    """
    x0, y0, x1, y1 = workspace.bounds
    w, h = workspace.width * PX_PER_M, workspace.height * PX_PER_M

    def pt(p):
        return (p[0] - x0) * PX_PER_M, (y1 - p[1]) * PX_PER_M

    def poly(points, style):
        s = " ".join(f"{a:.2f},{b:.2f}" for a, b in map(pt, points))
        return f'<polygon points="{s}" {style}/>'

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}" '
        f'viewBox="0 0 {w:.2f} {h:.2f}">',
        f'<rect x="0" y="0" width="{w:.2f}" height="{h:.2f}" fill="white" stroke="black"/>',
    ]
    for name, region in workspace.regions.items():
        out.append(poly(region, 'fill="#cce5ff" stroke="#3b7dd8"'))
        cx, cy = pt(region.mean(axis=0))
        out.append(f'<text x="{cx:.2f}" y="{cy:.2f}" font-size="12">{escape(name)}</text>')
    for obstacle in workspace.obstacles:
        out.append(poly(obstacle, 'fill="#555555"'))
    for lid, mean, cov in landmarks:
        rx, ry, angle = _ellipse(mean, cov, epsilon)
        cx, cy = pt(mean)
        out.append(
            f'<ellipse cx="{cx:.2f}" cy="{cy:.2f}" rx="{max(rx, 1e-3) * PX_PER_M:.2f}" '
            f'ry="{max(ry, 1e-3) * PX_PER_M:.2f}" transform="rotate({-angle:.2f} {cx:.2f} {cy:.2f})" '
            'fill="none" stroke="#ff7f0e"/>'
        )
        out.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="2" fill="#ff7f0e"/>')
        out.append(f'<text x="{cx + 4:.2f}" y="{cy - 4:.2f}" font-size="12">{escape(lid)}</text>')
    for j, path in enumerate(paths):
        path = np.asarray(path)
        if len(path) == 0:
            continue
        color = _COLORS[j % len(_COLORS)]
        s = " ".join(f"{a:.2f},{b:.2f}" for a, b in map(pt, path))
        out.append(f'<polyline points="{s}" fill="none" stroke="{color}" stroke-width="2"/>')
        sx, sy = pt(path[0])
        out.append(f'<circle cx="{sx:.2f}" cy="{sy:.2f}" r="4" fill="{color}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def dfa_dot(dfa: DFA) -> str:
    return dfa.to_dot()


def det_cov_csv(steps: Sequence[dict], landmark_ids: Sequence[str]) -> str:
    """One row per step with ``det(cov)`` of every landmark; header only when empty."""
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["t"] + [f"det_{lid}" for lid in landmark_ids])
    for step in steps:
        dets = {lm["id"]: lm["det_cov"] for lm in step.get("landmarks", [])}
        w.writerow([step["t"]] + [f"{dets[lid]:.9g}" for lid in landmark_ids])
    return buf.getvalue()
