"""Deterministic SVG scatter plots of 2-D sample batches.

Output is plain string assembly with fixed float formatting, so identical
inputs produce identical bytes.
"""

from __future__ import annotations

import numpy as np

from .mixture import GaussianMixture, SampleBatch

__all__ = ["scatter_svg"]

_SIZE = 640
_MARGIN = 48
_SAFE_COLOR = "#4878cf"
_UNSAFE_COLOR = "#d65f5f"


def _px(v: float) -> str:
    return format(float(v), ".2f")


def scatter_svg(batch, gmm: GaussianMixture, path: str = None) -> str:
    """Render points over the mixture's component glyphs.

    Component means are drawn as crosses with a two-sigma disc; unsafe
    components are shaded red and points are colored by the safety of
    their assigned component. An empty batch renders only the world
    glyphs. Only 2-D worlds can be drawn; higher dimensions raise,
    pointing at the CSV outputs instead.
    """
    if isinstance(batch, SampleBatch):
        pts = batch.points
    else:
        pts = np.asarray(batch, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, gmm.dim)
    if pts.ndim != 2:
        raise ValueError("need an (n, d) batch of points")
    if pts.shape[1] != 2 or gmm.dim != 2:
        raise ValueError(
            "scatter plots are only defined for 2-D worlds; use the CSV outputs"
        )

    sigma = np.sqrt(np.max(gmm.variances, axis=1))
    lo = float(np.min(gmm.means - 4.5 * sigma[:, None]))
    hi = float(np.max(gmm.means + 4.5 * sigma[:, None]))
    if pts.shape[0]:
        lo = min(lo, float(np.min(pts)) - 0.5)
        hi = max(hi, float(np.max(pts)) + 0.5)
    span = hi - lo
    inner = _SIZE - 2 * _MARGIN

    def sx(x: float) -> float:
        return _MARGIN + (x - lo) / span * inner

    def sy(y: float) -> float:
        return _SIZE - _MARGIN - (y - lo) / span * inner

    assigned = np.argmax(gmm.responsibilities(pts), axis=1)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SIZE}" height="{_SIZE}" '
        f'viewBox="0 0 {_SIZE} {_SIZE}">',
        f'<rect width="{_SIZE}" height="{_SIZE}" fill="#ffffff"/>',
    ]
    for i in range(gmm.num_components):
        cx, cy = sx(gmm.means[i, 0]), sy(gmm.means[i, 1])
        r = 2.0 * sigma[i] / span * inner
        color = _UNSAFE_COLOR if gmm.unsafe_mask[i] else _SAFE_COLOR
        opacity = "0.15" if gmm.unsafe_mask[i] else "0.08"
        parts.append(
            f'<circle cx="{_px(cx)}" cy="{_px(cy)}" r="{_px(r)}" '
            f'fill="{color}" fill-opacity="{opacity}"/>'
        )
    radius = 1.6
    for i in range(pts.shape[0]):
        color = _UNSAFE_COLOR if gmm.unsafe_mask[assigned[i]] else _SAFE_COLOR
        parts.append(
            f'<circle cx="{_px(sx(pts[i, 0]))}" cy="{_px(sy(pts[i, 1]))}" '
            f'r="{radius}" fill="{color}" fill-opacity="0.55"/>'
        )
    cross = 7.0
    for i in range(gmm.num_components):
        cx, cy = sx(gmm.means[i, 0]), sy(gmm.means[i, 1])
        parts.append(
            f'<path d="M {_px(cx - cross)} {_px(cy)} H {_px(cx + cross)} '
            f'M {_px(cx)} {_px(cy - cross)} V {_px(cy + cross)}" '
            f'stroke="#111111" stroke-width="2"/>'
        )
    parts.append("</svg>")
    text = "\n".join(parts) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text
