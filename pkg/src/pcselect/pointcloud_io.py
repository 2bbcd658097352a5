"""KITTI-convention point clouds, labels and calibration.

Velodyne scans are consecutive little-endian float32 quadruples
``(x, y, z, intensity)``.  Label files hold 15 whitespace-separated fields
per object (16 when a detection score is appended).  Calibration files are
``key: v0 v1 ...`` lines; only ``Tr_velo_to_cam`` and ``R0_rect`` are used.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

DONTCARE = "DontCare"
_POINT_DTYPE = np.dtype("<f4")


class ParseError(ValueError):
    """Base class for malformed KITTI inputs."""


class LengthNotMultipleOf16(ParseError):
    pass


class NonFiniteValue(ParseError):
    def __init__(self, index: int):
        super().__init__(f"non-finite value in point {index}")
        self.index = index


class MalformedLine(ParseError):
    def __init__(self, line_no: int, detail: str = ""):
        super().__init__(f"line {line_no}: malformed label line {detail}".rstrip())
        self.line_no = line_no


class FieldOutOfRange(ParseError):
    def __init__(self, line_no: int, field_name: str):
        super().__init__(f"line {line_no}: field {field_name!r} out of range")
        self.line_no = line_no
        self.field = field_name


class MissingKey(ParseError):
    pass


class MalformedMatrix(ParseError):
    pass


class DegenerateDims(ValueError):
    pass


def normalize_angle(angle: float) -> float:
    """Map an angle into (-pi, pi]."""
    a = math.remainder(float(angle), 2.0 * math.pi)
    return math.pi if a <= -math.pi else a


# --------------------------------------------------------------------- types

@dataclass(frozen=True, eq=False)
class PointCloud:
    """One frame of ``(x, y, z, intensity)`` samples, stored as float32 (N, 4)."""

    points: np.ndarray
    frame_id: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float32)
        if pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError(f"points must have shape (N, 4), got {pts.shape}")
        bad = ~np.isfinite(pts).all(axis=1)
        if bad.any():
            raise NonFiniteValue(int(np.flatnonzero(bad)[0]))
        pts = np.ascontiguousarray(pts)
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        return (self.frame_id == other.frame_id
                and self.points.shape == other.points.shape
                and self.points.tobytes() == other.points.tobytes())

    __hash__ = None

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    def with_points(self, points: np.ndarray) -> "PointCloud":
        return PointCloud(points, self.frame_id)


@dataclass(frozen=True)
class OrientedBox3D:
    """Yaw-rotated cuboid in the sensor frame.

    ``dims`` is ``(length, width, height)``; length runs along the heading.
    ``center`` is the geometric center of the cuboid.
    """

    center: tuple[float, float, float]
    dims: tuple[float, float, float]
    yaw: float

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        dims = tuple(float(v) for v in self.dims)
        if len(center) != 3 or len(dims) != 3:
            raise ValueError("center and dims need three components")
        if not all(math.isfinite(v) for v in center + dims + (float(self.yaw),)):
            raise ValueError("box fields must be finite")
        if min(dims) <= 0.0:
            raise DegenerateDims(f"box dims must be positive, got {dims}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))

    @property
    def volume(self) -> float:
        l, w, h = self.dims
        return l * w * h

    def as_array(self) -> np.ndarray:
        return np.array([*self.center, *self.dims, self.yaw], dtype=np.float64)

    @classmethod
    def from_array(cls, row) -> "OrientedBox3D":
        return cls(tuple(row[0:3]), tuple(row[3:6]), float(row[6]))

    def corners(self) -> np.ndarray:
        """(8, 3) corners; first four on the bottom face, counter-clockwise."""
        l, w, h = self.dims
        xs = np.array([1, -1, -1, 1, 1, -1, -1, 1]) * (l / 2)
        ys = np.array([1, 1, -1, -1, 1, 1, -1, -1]) * (w / 2)
        zs = np.array([-1, -1, -1, -1, 1, 1, 1, 1]) * (h / 2)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        out = np.empty((8, 3))
        out[:, 0] = c * xs - s * ys + self.center[0]
        out[:, 1] = s * xs + c * ys + self.center[1]
        out[:, 2] = zs + self.center[2]
        return out


def boxes_to_array(boxes: Iterable[OrientedBox3D]) -> np.ndarray:
    rows = [b.as_array() for b in boxes]
    return np.array(rows, dtype=np.float64).reshape(-1, 7)


@dataclass(frozen=True)
class ObjectLabel:
    class_name: str
    truncation: float
    occlusion: int
    alpha: float
    bbox2d: tuple[float, float, float, float]
    dims: tuple[float, float, float]          # height, width, length
    location_cam: tuple[float, float, float]  # bottom-face center, rectified camera frame
    rotation_y: float
    score: float | None = None

    @property
    def is_dontcare(self) -> bool:
        return self.class_name == DONTCARE

    @property
    def bbox_height(self) -> float:
        return self.bbox2d[3] - self.bbox2d[1]


@dataclass(frozen=True)
class Calibration:
    velo_to_cam: np.ndarray = field(repr=False)  # (3, 4)
    rect: np.ndarray = field(repr=False)         # (3, 3)

    def __post_init__(self):
        v2c = np.array(self.velo_to_cam, dtype=np.float64).reshape(3, 4)
        rect = np.array(self.rect, dtype=np.float64).reshape(3, 3)
        for name, rot in (("Tr_velo_to_cam", v2c[:, :3]), ("R0_rect", rect)):
            if np.abs(rot @ rot.T - np.eye(3)).max() > 1e-6:
                raise MalformedMatrix(f"{name} rotation block is not orthonormal")
        v2c.flags.writeable = False
        rect.flags.writeable = False
        object.__setattr__(self, "velo_to_cam", v2c)
        object.__setattr__(self, "rect", rect)
        # published matrices are orthonormal only to ~1e-7, so invert exactly
        fwd = np.eye(4)
        fwd[:3, :3] = rect @ v2c[:, :3]
        fwd[:3, 3] = rect @ v2c[:, 3]
        object.__setattr__(self, "_fwd", fwd)
        object.__setattr__(self, "_inv", np.linalg.inv(fwd))

    @classmethod
    def identity(cls) -> "Calibration":
        return cls(np.hstack([np.eye(3), np.zeros((3, 1))]), np.eye(3))

    @classmethod
    def nominal(cls) -> "Calibration":
        """Axis permutation between a KITTI camera and velodyne, no offset."""
        rot = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
        return cls(np.hstack([rot, np.zeros((3, 1))]), np.eye(3))

    def rect_to_velo(self, pts: np.ndarray) -> np.ndarray:
        """Rectified-camera points (N, 3) to the sensor frame."""
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        return pts @ self._inv[:3, :3].T + self._inv[:3, 3]

    def velo_to_rect(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        return pts @ self._fwd[:3, :3].T + self._fwd[:3, 3]

    def __eq__(self, other):
        if not isinstance(other, Calibration):
            return NotImplemented
        return (np.array_equal(self.velo_to_cam, other.velo_to_cam)
                and np.array_equal(self.rect, other.rect))

    __hash__ = None


# ------------------------------------------------------------- velodyne .bin

def read_velodyne_bin(data: bytes, frame_id: str = "") -> PointCloud:
    if len(data) % 16:
        raise LengthNotMultipleOf16(f"{len(data)} bytes is not a multiple of 16")
    pts = np.frombuffer(data, dtype=_POINT_DTYPE).reshape(-1, 4)
    return PointCloud(pts.astype(np.float32), frame_id)


def write_velodyne_bin(cloud: PointCloud) -> bytes:
    return cloud.points.astype(_POINT_DTYPE, copy=False).tobytes()


def load_velodyne(path, frame_id: str | None = None) -> PointCloud:
    from pathlib import Path
    path = Path(path)
    return read_velodyne_bin(path.read_bytes(), path.stem if frame_id is None else frame_id)


# -------------------------------------------------------------------- labels

def _parse_label_line(line: str, line_no: int) -> ObjectLabel:
    parts = line.split()
    if len(parts) not in (15, 16):
        raise MalformedLine(line_no, f"(expected 15 or 16 fields, got {len(parts)})")
    try:
        nums = [float(v) for v in parts[1:]]
    except ValueError as exc:
        raise MalformedLine(line_no, f"({exc})") from None
    cls = parts[0]
    trunc, occ_f, alpha = nums[0], nums[1], nums[2]
    bbox = tuple(nums[3:7])
    dims = tuple(nums[7:10])
    loc = tuple(nums[10:13])
    ry = nums[13]
    score = nums[14] if len(nums) == 15 else None
    if not all(math.isfinite(v) for v in nums):
        raise MalformedLine(line_no, "(non-finite number)")
    if occ_f != int(occ_f):
        raise MalformedLine(line_no, "(occlusion must be an integer)")
    occ = int(occ_f)
    if cls != DONTCARE:
        # DontCare rows carry -1/-10/-1000 sentinels in these fields
        if not 0.0 <= trunc <= 1.0:
            raise FieldOutOfRange(line_no, "truncation")
        if occ not in (0, 1, 2, 3):
            raise FieldOutOfRange(line_no, "occlusion")
        if min(dims) <= 0.0:
            raise FieldOutOfRange(line_no, "dimensions")
    if bbox[2] < bbox[0] or bbox[3] < bbox[1]:
        raise FieldOutOfRange(line_no, "bbox")
    return ObjectLabel(cls, trunc, occ, alpha, bbox, dims, loc, ry, score)


def read_labels(text: str) -> list[ObjectLabel]:
    labels = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            labels.append(_parse_label_line(line, line_no))
    return labels


def format_label(label: ObjectLabel) -> str:
    """One KITTI label line; appends the score when the label has one."""
    fields = [label.class_name, f"{label.truncation:.2f}", str(label.occlusion),
              f"{label.alpha:.6f}"]
    fields += [f"{v:.2f}" for v in label.bbox2d]
    fields += [f"{v:.6f}" for v in label.dims]
    fields += [f"{v:.6f}" for v in label.location_cam]
    fields.append(f"{label.rotation_y:.6f}")
    if label.score is not None:
        fields.append(f"{label.score:.6f}")
    return " ".join(fields)


def write_labels(labels: Sequence[ObjectLabel]) -> str:
    return "".join(format_label(l) + "\n" for l in labels)


# --------------------------------------------------------------- calibration

_CALIB_SHAPES = {"Tr_velo_to_cam": (3, 4), "R0_rect": (3, 3)}


def read_calibration(text: str) -> Calibration:
    found: dict[str, np.ndarray] = {}
    for line in text.splitlines():
        if ":" not in line:
            continue
        key, _, rest = line.partition(":")
        key = key.strip()
        if key not in _CALIB_SHAPES:
            continue
        shape = _CALIB_SHAPES[key]
        try:
            vals = [float(v) for v in rest.split()]
        except ValueError:
            raise MalformedMatrix(f"{key}: non-numeric entry") from None
        if len(vals) != shape[0] * shape[1] or not all(math.isfinite(v) for v in vals):
            raise MalformedMatrix(f"{key}: expected {shape[0] * shape[1]} finite values")
        found[key] = np.array(vals).reshape(shape)
    for key in _CALIB_SHAPES:
        if key not in found:
            raise MissingKey(key)
    return Calibration(found["Tr_velo_to_cam"], found["R0_rect"])


def write_calibration(calib: Calibration) -> str:
    def row(m):
        return " ".join(f"{v:.12e}" for v in np.asarray(m).ravel())
    return f"R0_rect: {row(calib.rect)}\nTr_velo_to_cam: {row(calib.velo_to_cam)}\n"


# ------------------------------------------------------------ frame changes

def label_to_lidar_box(label: ObjectLabel, calib: Calibration) -> OrientedBox3D:
    """Camera-frame label to a sensor-frame box.

    The label location is the bottom-face center; the sensor-frame center is
    lifted by half the height along the sensor's vertical axis.
    """
    h, w, l = label.dims
    if min(h, w, l) <= 0.0:
        raise DegenerateDims(f"label dims must be positive, got {label.dims}")
    bottom = calib.rect_to_velo(np.array(label.location_cam))[0]
    center = (bottom[0], bottom[1], bottom[2] + h / 2.0)
    return OrientedBox3D(center, (l, w, h), -label.rotation_y - math.pi / 2.0)


def lidar_box_to_label(box: OrientedBox3D, calib: Calibration, class_name: str,
                       score: float | None = None) -> ObjectLabel:
    """Inverse of :func:`label_to_lidar_box`; 2D fields are left at zero."""
    l, w, h = box.dims
    bottom = np.array([box.center[0], box.center[1], box.center[2] - h / 2.0])
    loc = calib.velo_to_rect(bottom)[0]
    ry = normalize_angle(-box.yaw - math.pi / 2.0)
    return ObjectLabel(class_name, 0.0, 0, 0.0, (0.0, 0.0, 0.0, 0.0), (h, w, l),
                       tuple(float(v) for v in loc), ry, score)


def label_corners_cam(label: ObjectLabel) -> np.ndarray:
    """(8, 3) box corners in the rectified camera frame, devkit convention."""
    h, w, l = label.dims
    x = np.array([l, l, -l, -l, l, l, -l, -l]) / 2.0
    y = np.array([0, 0, 0, 0, -h, -h, -h, -h], dtype=np.float64)
    z = np.array([w, -w, -w, w, w, -w, -w, w]) / 2.0
    c, s = math.cos(label.rotation_y), math.sin(label.rotation_y)
    rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return (rot @ np.vstack([x, y, z])).T + np.array(label.location_cam)
