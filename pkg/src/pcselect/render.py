"""Top-down SVG rendering of a frame with detections and ground truth.

Lidar x (forward) points up the page and y (left) points left.  The scene
group carries the world-to-screen matrix, so every box is a plain ``<rect>``
whose transform is ``translate(cx cy) rotate(yaw_deg)`` in world units.
"""
from __future__ import annotations

import math
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .pointcloud_io import OrientedBox3D, PointCloud

PIXELS_PER_METER = 8.0
MARGIN_M = 2.0
MAX_POINTS = 50000
DETECTION_COLOR = "#1a9e1a"
TRUTH_COLOR = "#c8322d"


def _num(v: float) -> str:
    s = f"{v:.4f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def _rect(box: OrientedBox3D, label: str) -> str:
    l, w, _ = box.dims
    return (f'<rect x="{_num(-l / 2)}" y="{_num(-w / 2)}" width="{_num(l)}" height="{_num(w)}" '
            f'transform="translate({_num(box.center[0])} {_num(box.center[1])}) '
            f'rotate({_num(math.degrees(box.yaw))})"><title>{escape(label)}</title></rect>')


def _box_of(item) -> OrientedBox3D:
    return item.box if hasattr(item, "box") else item


def render_bev_svg(cloud: PointCloud | None, detections: Sequence = (),
                   gts: Sequence | None = None, scale: float = PIXELS_PER_METER) -> str:
    """SVG 1.1 text for one frame.

    ``detections`` and ``gts`` hold objects with a ``box`` attribute (or bare
    boxes).  Point clouds above ``MAX_POINTS`` are thinned by a fixed stride.
    """
    xy = np.zeros((0, 2)) if cloud is None else cloud.xyz[:, :2].astype(np.float64)
    if len(xy) > MAX_POINTS:
        xy = xy[:: math.ceil(len(xy) / MAX_POINTS)]
    dets = [d for d in detections]
    truths = [] if gts is None else [g for g in gts if _box_of(g) is not None]

    extent = [xy]
    for item in dets + truths:
        extent.append(_box_of(item).corners()[:, :2])
    allpts = np.concatenate(extent) if any(len(e) for e in extent) else np.zeros((0, 2))
    if len(allpts):
        lo = allpts.min(axis=0) - MARGIN_M
        hi = allpts.max(axis=0) + MARGIN_M
    else:
        lo, hi = np.array([-10.0, -10.0]), np.array([10.0, 10.0])
    width = (hi[1] - lo[1]) * scale
    height = (hi[0] - lo[0]) * scale
    # screen_x = -s*y + s*ymax, screen_y = -s*x + s*xmax
    matrix = f"matrix(0 {_num(-scale)} {_num(-scale)} 0 {_num(scale * hi[1])} {_num(scale * hi[0])})"

    out = ['<?xml version="1.0" encoding="UTF-8"?>',
           f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_num(width)}" '
           f'height="{_num(height)}" viewBox="0 0 {_num(width)} {_num(height)}" '
           'style="background:#ffffff">',
           f'<g id="scene" transform="{matrix}">']
    if len(xy):
        out.append('<g id="points" fill="#505050">')
        out.extend(f'<circle cx="{_num(x)}" cy="{_num(y)}" r="0.06"/>' for x, y in xy)
        out.append('</g>')
    if truths:
        out.append(f'<g id="ground-truth" fill="none" stroke="{TRUTH_COLOR}" '
                   'stroke-width="0.08" stroke-dasharray="0.3 0.2">')
        out.extend(_rect(_box_of(g), getattr(g, "class_name", "truth")) for g in truths)
        out.append('</g>')
    if dets:
        out.append(f'<g id="detections" fill="none" stroke="{DETECTION_COLOR}" stroke-width="0.1">')
        out.extend(_rect(_box_of(d), f"{getattr(d, 'class_name', 'box')} "
                                     f"{_num(getattr(d, 'score', 1.0))}") for d in dets)
        out.append('</g>')
    out.append('</g>')
    out.append('</svg>')
    return "\n".join(out) + "\n"
