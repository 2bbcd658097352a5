"""Planar geometry for yaw-rotated boxes.

Boxes are passed to the kernels as float64 rows ``[x, y, z, l, w, h, yaw]``.
Bird's-eye footprints are convex quadrilaterals, so their intersection is
computed exactly (up to rounding) by Sutherland-Hodgman clipping and the
shoelace formula.
"""
from __future__ import annotations

import math

import numpy as np

from ._accel import njit, use_numba

_MAX_VERTS = 16


@njit
def footprint(box):
    """(4, 2) counter-clockwise BEV corners of one box row."""
    c = math.cos(box[6])
    s = math.sin(box[6])
    hl = box[3] / 2.0
    hw = box[4] / 2.0
    out = np.empty((4, 2))
    xs = (hl, -hl, -hl, hl)
    ys = (hw, hw, -hw, -hw)
    for i in range(4):
        out[i, 0] = box[0] + c * xs[i] - s * ys[i]
        out[i, 1] = box[1] + s * xs[i] + c * ys[i]
    return out


@njit
def polygon_area(poly, n):
    a = 0.0
    for i in range(n):
        j = (i + 1) % n
        a += poly[i, 0] * poly[j, 1] - poly[j, 0] * poly[i, 1]
    return 0.5 * a


@njit
def clip_convex(subject, n_subject, clip, n_clip):
    """Clip a polygon by a counter-clockwise convex polygon.

    Returns ``(vertices, count)``; ``vertices`` has spare rows past ``count``.
    """
    cur = np.empty((_MAX_VERTS, 2))
    nxt = np.empty((_MAX_VERTS, 2))
    for i in range(n_subject):
        cur[i, 0] = subject[i, 0]
        cur[i, 1] = subject[i, 1]
    n = n_subject
    for e in range(n_clip):
        if n == 0:
            break
        ax = clip[e, 0]
        ay = clip[e, 1]
        bx = clip[(e + 1) % n_clip, 0]
        by = clip[(e + 1) % n_clip, 1]
        ex = bx - ax
        ey = by - ay
        m = 0
        for i in range(n):
            px = cur[i, 0]
            py = cur[i, 1]
            qx = cur[(i + 1) % n, 0]
            qy = cur[(i + 1) % n, 1]
            dp = ex * (py - ay) - ey * (px - ax)
            dq = ex * (qy - ay) - ey * (qx - ax)
            if dp >= 0.0:
                if m < _MAX_VERTS:
                    nxt[m, 0] = px
                    nxt[m, 1] = py
                    m += 1
                if dq < 0.0 and m < _MAX_VERTS:
                    t = dp / (dp - dq)
                    nxt[m, 0] = px + t * (qx - px)
                    nxt[m, 1] = py + t * (qy - py)
                    m += 1
            elif dq >= 0.0 and m < _MAX_VERTS:
                t = dp / (dp - dq)
                nxt[m, 0] = px + t * (qx - px)
                nxt[m, 1] = py + t * (qy - py)
                m += 1
        tmp = cur
        cur = nxt
        nxt = tmp
        n = m
    return cur, n


@njit
def _row_less(a, b):
    for i in range(a.shape[0]):
        if a[i] < b[i]:
            return True
        if a[i] > b[i]:
            return False
    return False


@njit
def bev_intersection_area(a, b):
    fa = footprint(a)
    fb = footprint(b)
    poly, n = clip_convex(fa, 4, fb, 4)
    if n < 3:
        return 0.0
    return max(polygon_area(poly, n), 0.0)


@njit
def iou_3d(a, b):
    """Rotated 3D IoU of two box rows, clamped to [0, 1]."""
    # fixed operand order makes the result exactly symmetric
    if _row_less(b, a):
        tmp = a
        a = b
        b = tmp
    za0 = a[2] - a[5] / 2.0
    za1 = a[2] + a[5] / 2.0
    zb0 = b[2] - b[5] / 2.0
    zb1 = b[2] + b[5] / 2.0
    dz = min(za1, zb1) - max(za0, zb0)
    if dz <= 0.0:
        return 0.0
    # cheap reject on circumscribed circles
    ra = 0.5 * math.hypot(a[3], a[4])
    rb = 0.5 * math.hypot(b[3], b[4])
    if math.hypot(a[0] - b[0], a[1] - b[1]) >= ra + rb:
        return 0.0
    inter = bev_intersection_area(a, b) * dz
    if inter <= 0.0:
        return 0.0
    union = a[3] * a[4] * a[5] + b[3] * b[4] * b[5] - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


@njit
def _iou_matrix_nb(A, B):
    out = np.zeros((A.shape[0], B.shape[0]))
    for i in range(A.shape[0]):
        for j in range(B.shape[0]):
            out[i, j] = iou_3d(A[i], B[j])
    return out


@njit
def _bev_cover_nb(A, B):
    out = np.zeros((A.shape[0], B.shape[0]))
    for i in range(A.shape[0]):
        area = A[i, 3] * A[i, 4]
        for j in range(B.shape[0]):
            out[i, j] = bev_intersection_area(A[i], B[j]) / area
    return out


def _py(f):
    return getattr(f, "py_func", f)


def _iou_matrix_py(A, B):
    iou = _py(iou_3d)
    out = np.zeros((A.shape[0], B.shape[0]))
    for i in range(A.shape[0]):
        for j in range(B.shape[0]):
            out[i, j] = iou(A[i], B[j])
    return out


def _bev_cover_py(A, B):
    inter = _py(bev_intersection_area)
    out = np.zeros((A.shape[0], B.shape[0]))
    for i in range(A.shape[0]):
        for j in range(B.shape[0]):
            out[i, j] = inter(A[i], B[j]) / (A[i, 3] * A[i, 4])
    return out


def _rows(boxes) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(boxes, dtype=np.float64).reshape(-1, 7))


def iou_matrix(A, B) -> np.ndarray:
    """Pairwise rotated 3D IoU between box rows ``A`` (N, 7) and ``B`` (M, 7)."""
    A, B = _rows(A), _rows(B)
    return _iou_matrix_nb(A, B) if use_numba() else _iou_matrix_py(A, B)


def bev_cover_matrix(A, B) -> np.ndarray:
    """Fraction of each ``A`` footprint covered by each ``B`` footprint."""
    A, B = _rows(A), _rows(B)
    return _bev_cover_nb(A, B) if use_numba() else _bev_cover_py(A, B)


def rotated_iou(a, b) -> float:
    """Scalar convenience wrapper; accepts box rows or objects with ``as_array``."""
    a = a.as_array() if hasattr(a, "as_array") else np.asarray(a, dtype=np.float64)
    b = b.as_array() if hasattr(b, "as_array") else np.asarray(b, dtype=np.float64)
    fn = iou_3d if use_numba() else _py(iou_3d)
    return float(fn(a, b))


# ------------------------------------------------------- hull and rectangle

def convex_hull(points: np.ndarray) -> np.ndarray:
    """Counter-clockwise hull of 2D points (monotone chain), collinear points dropped."""
    pts = np.unique(np.asarray(points, dtype=np.float64).reshape(-1, 2), axis=0)
    if len(pts) < 3:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0.0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0.0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def min_area_rect(points: np.ndarray) -> tuple[float, float, float, float, float]:
    """Minimum-area enclosing rectangle via rotating calipers.

    Returns ``(cx, cy, length, width, yaw)`` with ``length >= width`` and yaw
    (the direction of the long side) in (-pi/2, pi/2].
    """
    hull = convex_hull(points)
    if len(hull) == 0:
        raise ValueError("no points")
    if len(hull) < 3:
        # degenerate: a point or a segment
        p, q = hull[0], hull[-1]
        d = q - p
        yaw = math.atan2(d[1], d[0]) if np.any(d) else 0.0
        c = (p + q) / 2.0
        return _canonical(c[0], c[1], float(np.hypot(*d)), 0.0, yaw)
    best = None
    n = len(hull)
    for i in range(n):
        edge = hull[(i + 1) % n] - hull[i]
        norm = math.hypot(edge[0], edge[1])
        if norm == 0.0:
            continue
        u = edge / norm
        v = np.array([-u[1], u[0]])
        pu, pv = hull @ u, hull @ v
        area = (pu.max() - pu.min()) * (pv.max() - pv.min())
        if best is None or area < best[0] - 1e-12:
            best = (area, u, v, pu, pv)
    _, u, v, pu, pv = best
    cu, cv = (pu.max() + pu.min()) / 2.0, (pv.max() + pv.min()) / 2.0
    center = cu * u + cv * v
    return _canonical(center[0], center[1], pu.max() - pu.min(), pv.max() - pv.min(),
                      math.atan2(u[1], u[0]))


def _canonical(cx, cy, a, b, yaw):
    if b > a:
        a, b, yaw = b, a, yaw + math.pi / 2.0
    yaw = math.remainder(yaw, math.pi)
    if yaw <= -math.pi / 2.0:
        yaw += math.pi
    return float(cx), float(cy), float(a), float(b), float(yaw)
