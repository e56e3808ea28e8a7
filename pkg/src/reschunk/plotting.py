"""Stick-figure SVG of ground truth (green) overlaid with a prediction (red)."""

from __future__ import annotations

import numpy as np

from .motion_data import ConfigurationError, SkeletonSpec, frames_to_positions

GT_COLOR = "green"
PRED_COLOR = "red"


def plot_prediction(gt, pred, skeleton: SkeletonSpec, frame_indices, cell: float = 200.0,
                    margin: float = 10.0, scale: float | None = None) -> str:
    """One row of cells, one per requested frame; in each cell both skeletons
    are drawn as bones between parent and child joints.

    Positions are projected orthographically onto the x-y plane:
    ``u = x0 + (x - cx) * scale``, ``v = y0 - (y - cy) * scale`` where (x0, y0)
    is the cell center and (cx, cy) the center of the joint bounding box over
    all drawn frames. ``scale`` defaults to the value that fits that box.
    """
    if skeleton.parent_index is None:
        raise ConfigurationError("plotting needs a skeleton with parent indices")
    frames = [int(f) for f in frame_indices]
    width = max(len(frames), 1) * cell
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_num(width)}" height="{_num(cell)}" '
            f'viewBox="0 0 {_num(width)} {_num(cell)}">')
    if not frames:
        return head + "\n</svg>\n"
    P_gt = frames_to_positions(np.asarray(gt, dtype=np.float64)[frames], skeleton)
    P_pr = frames_to_positions(np.asarray(pred, dtype=np.float64)[frames], skeleton)
    xy = np.concatenate([P_gt, P_pr])[..., :2].reshape(-1, 2)
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    center = (lo + hi) / 2
    if scale is None:
        extent = float(max(hi[0] - lo[0], hi[1] - lo[1]))
        scale = (cell - 2 * margin) / extent if extent > 0 else 1.0
    parts = [head]
    for k in range(len(frames)):
        origin = ((k + 0.5) * cell, 0.5 * cell)
        for positions, color in ((P_gt[k], GT_COLOR), (P_pr[k], PRED_COLOR)):
            parts.append(f'<g stroke="{color}" stroke-width="2" fill="none">')
            for j, p in enumerate(skeleton.parent_index):
                if p < 0:
                    continue
                u1, v1 = project(positions[p], center, scale, origin)
                u2, v2 = project(positions[j], center, scale, origin)
                parts.append(f'<line x1="{_num(u1)}" y1="{_num(v1)}" x2="{_num(u2)}" y2="{_num(v2)}"/>')
            parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def project(point, center, scale, origin):
    return (origin[0] + (point[0] - center[0]) * scale,
            origin[1] - (point[1] - center[1]) * scale)


def _num(v: float) -> str:
    return format(float(v), ".4f").rstrip("0").rstrip(".")
