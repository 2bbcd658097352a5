import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial import ConvexHull

from pcselect.geometry import (bev_cover_matrix, convex_hull, iou_matrix, min_area_rect,
                               rotated_iou)

from oracles import monte_carlo_iou

UNIT = [0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0]


def test_identity(backend):
    assert rotated_iou(UNIT, UNIT) == 1.0


def test_disjoint(backend):
    assert rotated_iou(UNIT, [10, 0, 0, 2, 2, 2, 0]) == 0.0
    # overlapping footprints, separated vertically
    assert rotated_iou(UNIT, [0, 0, 2.5, 2, 2, 2, 0]) == 0.0


def test_half_offset_is_one_third(backend):
    # intersection 1x2x2 = 4, union 8 + 8 - 4 = 12
    assert rotated_iou(UNIT, [1, 0, 0, 2, 2, 2, 0]) == pytest.approx(1 / 3, abs=1e-9)


def test_cross_is_one_third(backend):
    # 4x2 and the same box turned 90 degrees: intersection 2x2, union 8 + 8 - 4
    a = [0, 0, 0, 4, 2, 1, 0]
    b = [0, 0, 0, 4, 2, 1, math.pi / 2]
    assert rotated_iou(a, b) == pytest.approx(1 / 3, abs=1e-9)


def test_rotation_by_pi_is_same_box(backend):
    a = [1, 2, 0, 4, 2, 1, 0.3]
    b = [1, 2, 0, 4, 2, 1, 0.3 + math.pi]
    assert rotated_iou(a, b) == pytest.approx(1.0, abs=1e-12)


def test_contained_box(backend):
    small = [0, 0, 0, 1, 1, 1, 0.7]
    big = [0, 0, 0, 4, 4, 4, 0]
    assert rotated_iou(small, big) == pytest.approx(1 / 64, abs=1e-12)


box_row = st.tuples(st.floats(-3, 3), st.floats(-3, 3), st.floats(-1, 1), st.floats(0.5, 6),
                    st.floats(0.5, 6), st.floats(0.5, 6), st.floats(-math.pi, math.pi))


@given(box_row, box_row)
def test_iou_symmetric_and_bounded(a, b):
    ab = rotated_iou(a, b)
    assert ab == rotated_iou(b, a)
    assert 0.0 <= ab <= 1.0


@given(box_row, st.floats(-10, 10), st.floats(-10, 10), st.floats(-math.pi, math.pi))
def test_iou_invariant_under_rigid_motion(a, dx, dy, t):
    b = (a[0] + 0.7, a[1] - 0.4, a[2], a[4], a[3], a[5], a[6] + 0.5)

    def move(r):
        c, s = math.cos(t), math.sin(t)
        return (c * r[0] - s * r[1] + dx, s * r[0] + c * r[1] + dy, r[2], r[3], r[4], r[5], r[6] + t)

    assert rotated_iou(move(a), move(b)) == pytest.approx(rotated_iou(a, b), abs=1e-9)


def test_iou_matches_monte_carlo(backend):
    gen = np.random.default_rng(7)
    for _ in range(20):
        a = np.r_[gen.uniform(-1, 1, 3), gen.uniform(0.5, 6, 3), gen.uniform(-np.pi, np.pi)]
        b = np.r_[gen.uniform(-1, 1, 3), gen.uniform(0.5, 6, 3), gen.uniform(-np.pi, np.pi)]
        assert abs(rotated_iou(a, b) - monte_carlo_iou(a, b, 100_000, gen)) < 0.02


def test_matrix_matches_scalar(backend):
    gen = np.random.default_rng(3)
    A = np.c_[gen.uniform(-3, 3, (6, 3)), gen.uniform(0.5, 4, (6, 3)), gen.uniform(-3, 3, 6)]
    B = A[::-1] + 0.3
    M = iou_matrix(A, B)
    assert M.shape == (6, 6)
    for i in range(6):
        for j in range(6):
            assert M[i, j] == rotated_iou(A[i], B[j])
    assert iou_matrix(A, np.zeros((0, 7))).shape == (6, 0)


def test_bev_cover(backend):
    a = [[0, 0, 0, 2, 2, 1, 0]]
    b = [[1, 0, 50, 2, 2, 1, 0]]  # height ignored
    assert bev_cover_matrix(a, b)[0, 0] == pytest.approx(0.5)
    assert bev_cover_matrix(a, [[0, 0, 0, 10, 10, 1, 0.3]])[0, 0] == pytest.approx(1.0)


# ------------------------------------------------------------ hull / rect

@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=3, max_size=60))
def test_hull_area_matches_scipy(pts):
    pts = np.array(pts)
    try:
        ref = ConvexHull(pts).volume
    except Exception:
        return  # degenerate input, scipy refuses
    hull = convex_hull(pts)
    x, y = hull[:, 0], hull[:, 1]
    area = 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    assert area == pytest.approx(ref, rel=1e-9, abs=1e-9)


def _brute_rect_area(pts, steps=20_000):
    best = math.inf
    for t in np.linspace(0, math.pi / 2, steps, endpoint=False):
        u = np.array([math.cos(t), math.sin(t)])
        v = np.array([-u[1], u[0]])
        pu, pv = pts @ u, pts @ v
        best = min(best, (pu.max() - pu.min()) * (pv.max() - pv.min()))
    return best


def test_min_area_rect_beats_angle_sweep():
    gen = np.random.default_rng(0)
    for _ in range(10):
        pts = gen.normal(0, 1, (40, 2)) * [3, 1]
        cx, cy, l, w, yaw = min_area_rect(pts)
        assert l >= w and -math.pi / 2 < yaw <= math.pi / 2
        assert l * w <= _brute_rect_area(pts) + 1e-9
        assert l * w == pytest.approx(_brute_rect_area(pts), rel=1e-3)


def test_min_area_rect_recovers_rotated_rectangle():
    t = 0.4
    c, s = math.cos(t), math.sin(t)
    corners = np.array([[2, 1], [-2, 1], [-2, -1], [2, -1]], dtype=float)
    pts = corners @ np.array([[c, s], [-s, c]]) + [5, -3]
    cx, cy, l, w, yaw = min_area_rect(pts)
    assert (cx, cy, l, w, yaw) == pytest.approx((5, -3, 4, 2, t), abs=1e-9)


def test_min_area_rect_degenerate():
    assert min_area_rect(np.array([[1.0, 1.0]]))[:4] == (1.0, 1.0, 0.0, 0.0)
    cx, cy, l, w, yaw = min_area_rect(np.array([[0.0, 0.0], [0.0, 2.0], [0.0, 1.0]]))
    assert (cx, cy, l, w) == pytest.approx((0, 1, 2, 0)) and yaw == pytest.approx(math.pi / 2)
