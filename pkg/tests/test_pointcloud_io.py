import math
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pcselect.pointcloud_io import (Calibration, DegenerateDims, FieldOutOfRange,
                                    LengthNotMultipleOf16, MalformedLine, MalformedMatrix,
                                    MissingKey, NonFiniteValue, ObjectLabel, OrientedBox3D,
                                    PointCloud, format_label, label_corners_cam,
                                    label_to_lidar_box, lidar_box_to_label, normalize_angle,
                                    read_calibration, read_labels, read_velodyne_bin,
                                    write_calibration, write_labels, write_velodyne_bin)

KITTI_CALIB = """P0: 7.215377e+02 0.000000e+00 6.095593e+02 0.000000e+00 0.000000e+00 7.215377e+02 1.728540e+02 0.000000e+00 0.000000e+00 0.000000e+00 1.000000e+00 0.000000e+00
R0_rect: 9.999239e-01 9.837760e-03 -7.445048e-03 -9.869795e-03 9.999421e-01 -4.278459e-03 7.402527e-03 4.351614e-03 9.999631e-01
Tr_velo_to_cam: 7.533745e-03 -9.999714e-01 -6.166020e-04 -4.069766e-03 1.480249e-02 7.280733e-04 -9.998902e-01 -7.631618e-02 9.998621e-01 7.523790e-03 1.480755e-02 -2.717806e-01
Tr_imu_to_velo: 9.999976e-01 7.553071e-04 -2.035826e-03 -8.086759e-01 -7.854027e-04 9.998898e-01 -1.482298e-02 3.195559e-01 2.024406e-03 1.482454e-02 9.998881e-01 -7.997231e-01
"""

CAR_LINE = "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59"


# ------------------------------------------------------------- velodyne

def test_bin_layout_is_little_endian_float32():
    raw = struct.pack("<8f", 1.0, 2.0, 3.0, 0.5, -1.0, -2.0, -3.0, 0.25)
    cloud = read_velodyne_bin(raw)
    assert cloud.points.tolist() == [[1, 2, 3, 0.5], [-1, -2, -3, 0.25]]
    assert write_velodyne_bin(cloud) == raw


@given(st.lists(st.tuples(*[st.floats(-1e6, 1e6, width=32)] * 4), max_size=50))
def test_bin_round_trip(rows):
    cloud = PointCloud(np.array(rows, dtype=np.float32).reshape(-1, 4))
    assert read_velodyne_bin(write_velodyne_bin(cloud)) == cloud


def test_bin_rejects_partial_points():
    with pytest.raises(LengthNotMultipleOf16):
        read_velodyne_bin(b"\x00" * 20)


def test_bin_rejects_non_finite():
    raw = struct.pack("<8f", 0, 0, 0, 0, 1, float("nan"), 0, 0)
    with pytest.raises(NonFiniteValue) as exc:
        read_velodyne_bin(raw)
    assert exc.value.index == 1


def test_empty_bin_is_empty_cloud():
    assert len(read_velodyne_bin(b"")) == 0


def test_cloud_is_read_only():
    cloud = read_velodyne_bin(struct.pack("<4f", 1, 2, 3, 4))
    with pytest.raises(ValueError):
        cloud.points[0, 0] = 5.0


# ---------------------------------------------------------------- labels

def test_label_line_fields():
    (lab,) = read_labels(CAR_LINE + "\n")
    assert lab.class_name == "Car" and lab.occlusion == 0
    assert lab.dims == (1.65, 1.67, 3.64)
    assert lab.location_cam == (-0.65, 1.71, 46.70)
    assert lab.rotation_y == -1.59 and lab.score is None
    assert lab.bbox_height == pytest.approx(26.79)


def test_label_with_score():
    (lab,) = read_labels(CAR_LINE + " 0.93")
    assert lab.score == 0.93


def test_dontcare_sentinels_accepted():
    line = "DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10"
    (lab,) = read_labels(line)
    assert lab.is_dontcare


@pytest.mark.parametrize("line,err", [
    ("Car 0 0 0", MalformedLine),
    (CAR_LINE.replace("-1.58", "abc"), MalformedLine),
    (CAR_LINE.replace("Car 0.00", "Car 1.50"), FieldOutOfRange),
    (CAR_LINE.replace("Car 0.00 0", "Car 0.00 4"), FieldOutOfRange),
    (CAR_LINE.replace("Car 0.00 0", "Car 0.00 0.5"), MalformedLine),
    (CAR_LINE.replace("1.65 1.67", "0 1.67"), FieldOutOfRange),
    (CAR_LINE.replace("587.01 173.33 614.12", "615.01 173.33 614.12"), FieldOutOfRange),
])
def test_label_errors(line, err):
    with pytest.raises(err):
        read_labels("\n" + line)


def test_label_error_reports_line_number():
    with pytest.raises(MalformedLine) as exc:
        read_labels(CAR_LINE + "\nCar 1 2\n")
    assert exc.value.line_no == 2


def test_label_text_round_trip():
    labels = read_labels(CAR_LINE + "\n" + CAR_LINE.replace("Car", "Pedestrian") + " 0.5\n")
    assert read_labels(write_labels(labels)) == labels


# ----------------------------------------------------------- calibration

def test_read_kitti_calibration():
    calib = read_calibration(KITTI_CALIB)
    assert calib.velo_to_cam.shape == (3, 4)
    assert calib.rect[0, 0] == pytest.approx(0.9999239)
    assert read_calibration(write_calibration(calib)) == calib


def test_calibration_errors():
    with pytest.raises(MissingKey):
        read_calibration("R0_rect: 1 0 0 0 1 0 0 0 1\n")
    with pytest.raises(MalformedMatrix):
        read_calibration("R0_rect: 1 0 0 0 1 0 0 0\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n")
    with pytest.raises(MalformedMatrix):
        read_calibration("R0_rect: 2 0 0 0 1 0 0 0 1\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n")


def test_rect_velo_inverse():
    calib = read_calibration(KITTI_CALIB)
    pts = np.random.default_rng(0).normal(0, 20, (50, 3))
    np.testing.assert_allclose(calib.rect_to_velo(calib.velo_to_rect(pts)), pts, atol=1e-9)


# ---------------------------------------------------------------- boxes

def test_box_validation():
    with pytest.raises(DegenerateDims):
        OrientedBox3D((0, 0, 0), (1, 0, 1), 0)
    with pytest.raises(ValueError):
        OrientedBox3D((0, float("inf"), 0), (1, 1, 1), 0)
    assert OrientedBox3D((0, 0, 0), (1, 1, 1), 3 * math.pi).yaw == pytest.approx(math.pi)


@given(st.floats(-50, 50))
def test_normalize_angle_range(a):
    n = normalize_angle(a)
    assert -math.pi < n <= math.pi
    assert math.isclose(math.cos(n), math.cos(a), abs_tol=1e-9)
    assert math.isclose(math.sin(n), math.sin(a), abs_tol=1e-9)


label_strategy = st.builds(
    lambda h, w, l, x, y, z, ry: ObjectLabel("Car", 0.0, 0, 0.0, (0, 0, 10, 10), (h, w, l),
                                             (x, y, z), ry),
    st.floats(0.5, 4), st.floats(0.3, 3), st.floats(0.3, 12),
    st.floats(-30, 30), st.floats(-2, 3), st.floats(1, 70), st.floats(-math.pi, math.pi))


def _corner_distance(label, calib):
    ours = label_to_lidar_box(label, calib).corners()
    theirs = calib.rect_to_velo(label_corners_cam(label))
    d = np.linalg.norm(ours[:, None, :] - theirs[None, :, :], axis=2)
    return max(d.min(axis=1).max(), d.min(axis=0).max())


@given(label_strategy)
def test_lidar_box_corners_match_devkit_corners(label):
    assert _corner_distance(label, Calibration.nominal()) < 1e-9


@given(label_strategy)
def test_kitti_calib_corners_within_axis_tilt(label):
    # the camera's vertical axis is tilted ~0.025 rad against the sensor's
    calib = read_calibration(KITTI_CALIB)
    assert _corner_distance(label, calib) < 0.03 * np.linalg.norm(label.dims)
    box = label_to_lidar_box(label, calib)
    bottom = np.array(box.center) - [0, 0, label.dims[0] / 2]
    np.testing.assert_allclose(calib.velo_to_rect(bottom)[0], label.location_cam, atol=1e-9)


@given(label_strategy)
def test_label_box_round_trip(label):
    calib = read_calibration(KITTI_CALIB)
    back = lidar_box_to_label(label_to_lidar_box(label, calib), calib, "Car")
    np.testing.assert_allclose(back.location_cam, label.location_cam, atol=1e-9)
    np.testing.assert_allclose(back.dims, label.dims)
    assert math.isclose(math.cos(back.rotation_y - label.rotation_y), 1.0, abs_tol=1e-9)


def test_nominal_axes():
    # camera z (forward) is sensor x; camera y (down) is sensor -z
    calib = Calibration.nominal()
    np.testing.assert_allclose(calib.rect_to_velo([0.0, 1.0, 10.0]), [[10.0, 0.0, -1.0]])
    lab = ObjectLabel("Car", 0, 0, 0, (0, 0, 1, 1), (1.5, 1.6, 3.9), (0.0, 1.7, 10.0), 0.0)
    box = label_to_lidar_box(lab, calib)
    assert box.center == pytest.approx((10.0, 0.0, -1.7 + 0.75))
    assert box.yaw == pytest.approx(-math.pi / 2)


def test_format_label_appends_score_only_when_present():
    lab = read_labels(CAR_LINE)[0]
    assert len(format_label(lab).split()) == 15
    assert len(format_label(lidar_box_to_label(label_to_lidar_box(lab, Calibration.nominal()),
                                               Calibration.nominal(), "Car", 0.4)).split()) == 16
