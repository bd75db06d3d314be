"""Static SVG renderings of a maze with trajectories drawn over it."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .env import MazeSpec

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def maze_svg(
    maze: MazeSpec,
    trajectories=(),
    labels=None,
    size: int = 480,
    title: str | None = None,
    show_points: bool = False,
) -> str:
    """SVG text: obstacles as grey rectangles, goals as circles, trajectories as polylines.

    ``trajectories`` is an iterable of ``(T, >=2)`` arrays in world coordinates.
    """
    b = maze.bounds
    w, h = b.xmax - b.xmin, b.ymax - b.ymin
    scale = size / max(w, h)
    width, height = w * scale, h * scale

    def xy(p):
        # SVG's y axis points down
        return (p[0] - b.xmin) * scale, (b.ymax - p[1]) * scale

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.2f} {height:.2f}">',
        f'<rect x="0" y="0" width="{width:.2f}" height="{height:.2f}" fill="white" stroke="black" stroke-width="2"/>',
    ]
    for o in maze.obstacles:
        x0, y0 = xy((o.xmin, o.ymax))
        out.append(
            f'<rect x="{x0:.2f}" y="{y0:.2f}" width="{(o.xmax - o.xmin) * scale:.2f}" '
            f'height="{(o.ymax - o.ymin) * scale:.2f}" fill="#555555"/>'
        )
    for r in maze.start_regions:
        x0, y0 = xy((r.xmin, r.ymax))
        out.append(
            f'<rect x="{x0:.2f}" y="{y0:.2f}" width="{(r.xmax - r.xmin) * scale:.2f}" '
            f'height="{(r.ymax - r.ymin) * scale:.2f}" fill="none" stroke="#999999" stroke-dasharray="4 3"/>'
        )
    for g in maze.goals:
        cx, cy = xy(g)
        out.append(
            f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{maze.goal_radius * scale:.2f}" '
            f'fill="#2ca02c" fill-opacity="0.25" stroke="#2ca02c"/>'
        )
    for i, traj in enumerate(trajectories):
        P = np.asarray(traj, dtype=float)[:, :2]
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join("{:.2f},{:.2f}".format(*xy(p)) for p in P)
        label = escape(labels[i]) if labels is not None and i < len(labels) else f"trajectory {i}"
        out.append(f'<g><title>{label}</title>')
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2" stroke-linejoin="round"/>')
        if show_points:
            for p in P:
                cx, cy = xy(p)
                out.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="2" fill="{color}"/>')
        sx, sy = xy(P[0])
        out.append(f'<circle cx="{sx:.2f}" cy="{sy:.2f}" r="4" fill="{color}" stroke="black"/>')
        out.append("</g>")
    if title:
        out.append(f'<text x="6" y="16" font-family="sans-serif" font-size="13">{escape(title)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path: str | Path, maze: MazeSpec, trajectories=(), **kw) -> None:
    Path(path).write_text(maze_svg(maze, trajectories, **kw))
