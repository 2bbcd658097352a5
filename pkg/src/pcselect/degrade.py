"""Pseudo-incompleteness operators.

Voxel grids are anchored at the origin: a point belongs to voxel
``floor(coord / edge)`` on each axis, so points on a boundary go to the
higher-index voxel.  Voxel indices are packed into one int64 key (21 bits
per axis), which bounds each axis to +/- 2**20 voxels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from ._accel import njit, use_numba
from .pointcloud_io import PointCloud

KINDS = ("none", "voxel_grid", "uniform", "random", "gaussian_noise")
_KIND_ALIASES = {"noise": "gaussian_noise"}

_AXIS_BITS = 21
_AXIS_OFFSET = 1 << (_AXIS_BITS - 1)


class NonPositiveEdge(ValueError):
    pass


class FractionOutOfRange(ValueError):
    pass


class NegativeSigma(ValueError):
    pass


class EmptyReference(ValueError):
    pass


@dataclass(frozen=True)
class DegradationSpec:
    kind: str = "none"
    param: float = 0.0
    seed: int = 0

    def __post_init__(self):
        kind = _KIND_ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ValueError(f"unknown degradation kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        p = float(self.param)
        if not math.isfinite(p):
            raise ValueError("degradation parameter must be finite")
        if kind in ("voxel_grid", "uniform") and p <= 0.0:
            raise NonPositiveEdge(f"voxel edge must be positive, got {p}")
        if kind == "random" and not 0.0 < p <= 1.0:
            raise FractionOutOfRange(f"keep fraction must be in (0, 1], got {p}")
        if kind == "gaussian_noise" and p < 0.0:
            raise NegativeSigma(f"sigma must be >= 0, got {p}")
        if not 0 <= int(self.seed) < 1 << 64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        object.__setattr__(self, "param", p)
        object.__setattr__(self, "seed", int(self.seed))

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "DegradationSpec":
        """Parse ``none``, ``voxel_grid:0.1``, ``uniform:0.2``, ``random:0.25``, ``noise:0.08``."""
        kind, _, param = text.strip().partition(":")
        if kind == "none":
            if param:
                raise ValueError("'none' takes no parameter")
            return cls("none", 0.0, seed)
        if not param:
            raise ValueError(f"degradation {text!r} needs a parameter")
        return cls(kind, float(param), seed)

    def token(self) -> str:
        if self.kind == "none":
            return "none"
        kind = "noise" if self.kind == "gaussian_noise" else self.kind
        return f"{kind}:{self.param:g}"

    @property
    def noise_sigma(self) -> float:
        return self.param if self.kind == "gaussian_noise" else 0.0


# ------------------------------------------------------------------ kernels
#
# Both paths number occupied voxels in order of first appearance in the
# input, so the backends produce identical outputs.

def _check_key_range(lo: np.ndarray, hi: np.ndarray) -> None:
    if lo.min(initial=0) < -_AXIS_OFFSET or hi.max(initial=0) >= _AXIS_OFFSET:
        raise ValueError("cloud extent exceeds the voxel index range for this edge")


def _check_extent(xyz: np.ndarray, edge: float) -> None:
    if xyz.shape[0]:
        lo = np.floor(xyz.min(axis=0).astype(np.float64) / edge)
        hi = np.floor(xyz.max(axis=0).astype(np.float64) / edge)
        _check_key_range(lo, hi)


def voxel_keys(xyz: np.ndarray, edge: float) -> np.ndarray:
    """Packed int64 voxel key of every point."""
    _check_extent(xyz, edge)
    off = np.floor(xyz.astype(np.float64) / edge).astype(np.int64) + _AXIS_OFFSET
    return (off[:, 0] << (2 * _AXIS_BITS)) | (off[:, 1] << _AXIS_BITS) | off[:, 2]


def _group_np(points, edge):
    keys = voxel_keys(points[:, :3], edge)
    if keys.size == 0:
        return np.zeros(0, dtype=np.int64), 0
    _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    remap = np.empty(first.size, dtype=np.int64)
    remap[np.argsort(first, kind="stable")] = np.arange(first.size)
    return remap[inverse.ravel()], int(first.size)


@njit
def _group_nb(points, edge):
    # open addressing on packed keys; ids follow first appearance
    n = points.shape[0]
    gid = np.empty(n, dtype=np.int64)
    size = 1
    while size < 2 * n:
        size <<= 1
    mask = size - 1
    slot_key = np.empty(size, dtype=np.int64)
    slot_id = np.full(size, -1, dtype=np.int64)
    off = 1 << 20
    ng = 0
    for i in range(n):
        ix = np.int64(np.floor(np.float64(points[i, 0]) / edge)) + off
        iy = np.int64(np.floor(np.float64(points[i, 1]) / edge)) + off
        iz = np.int64(np.floor(np.float64(points[i, 2]) / edge)) + off
        key = (ix << 42) | (iy << 21) | iz
        h = (np.uint64(key) * np.uint64(0x9E3779B97F4A7C15)) >> np.uint64(29)
        s = np.int64(h) & mask
        while True:
            if slot_id[s] < 0:
                slot_key[s] = key
                slot_id[s] = ng
                gid[i] = ng
                ng += 1
                break
            if slot_key[s] == key:
                gid[i] = slot_id[s]
                break
            s = (s + 1) & mask
    return gid, ng


def _group(points, edge):
    if use_numba():
        _check_extent(points[:, :3], edge)
        return _group_nb(points, float(edge))
    return _group_np(points, edge)


@njit
def _centroids_nb(points, gid, ng):
    sums = np.zeros((ng, 4))
    counts = np.zeros(ng)
    for i in range(points.shape[0]):
        g = gid[i]
        for c in range(4):
            sums[g, c] += np.float64(points[i, c])
        counts[g] += 1.0
    for g in range(ng):
        for c in range(4):
            sums[g, c] /= counts[g]
    return sums


def _centroids_np(points, gid, ng):
    counts = np.bincount(gid, minlength=ng).astype(np.float64)
    out = np.empty((ng, 4))
    for c in range(4):
        out[:, c] = np.bincount(gid, weights=points[:, c].astype(np.float64), minlength=ng)
    return out / counts[:, None] if ng else out


@njit
def _nearest_center_nb(points, gid, ng, edge):
    best = np.full(ng, -1, dtype=np.int64)
    best_d = np.empty(ng)
    for i in range(points.shape[0]):
        d = 0.0
        for c in range(3):
            v = np.float64(points[i, c])
            ctr = (np.floor(v / edge) + 0.5) * edge
            d += (v - ctr) * (v - ctr)
        g = gid[i]
        # strict < keeps the lowest index on ties
        if best[g] < 0 or d < best_d[g]:
            best[g] = i
            best_d[g] = d
    return np.sort(best)


def _nearest_center_np(points, gid, ng, edge):
    if ng == 0:
        return np.zeros(0, dtype=np.int64)
    xyz = points[:, :3].astype(np.float64)
    diff = xyz - (np.floor(xyz / edge) + 0.5) * edge
    d = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2]
    rank = np.lexsort((np.arange(gid.size), d, gid))
    g_sorted = gid[rank]
    first = np.concatenate(([True], g_sorted[1:] != g_sorted[:-1]))
    return np.sort(rank[first])


# --------------------------------------------------------------- operations

def voxel_grid_filter(cloud: PointCloud, edge: float) -> PointCloud:
    """Replace the points of every occupied voxel by their mean (x, y, z, intensity).

    Output rows follow the first appearance of each voxel in the input.
    """
    if not edge > 0.0:
        raise NonPositiveEdge(f"voxel edge must be positive, got {edge}")
    gid, ng = _group(cloud.points, edge)
    kernel = _centroids_nb if use_numba() else _centroids_np
    return cloud.with_points(kernel(cloud.points, gid, ng).astype(np.float32))


def uniform_sample_indices(cloud: PointCloud, edge: float) -> np.ndarray:
    """Ascending input indices of the points kept by :func:`uniform_sample`."""
    if not edge > 0.0:
        raise NonPositiveEdge(f"voxel edge must be positive, got {edge}")
    gid, ng = _group(cloud.points, edge)
    kernel = _nearest_center_nb if use_numba() else _nearest_center_np
    return kernel(cloud.points, gid, ng, float(edge))


def uniform_sample(cloud: PointCloud, edge: float) -> PointCloud:
    """Keep, per occupied voxel, the input point nearest the voxel center.

    Distance ties go to the lowest input index; kept points stay in input order.
    """
    return cloud.with_points(cloud.points[uniform_sample_indices(cloud, edge)])


def voxel_grid_and_uniform(cloud: PointCloud, edge: float) -> tuple[PointCloud, PointCloud]:
    """Both voxel samplers at one edge, sharing a single voxel grouping pass."""
    if not edge > 0.0:
        raise NonPositiveEdge(f"voxel edge must be positive, got {edge}")
    gid, ng = _group(cloud.points, edge)
    if use_numba():
        means = _centroids_nb(cloud.points, gid, ng)
        kept = _nearest_center_nb(cloud.points, gid, ng, float(edge))
    else:
        means = _centroids_np(cloud.points, gid, ng)
        kept = _nearest_center_np(cloud.points, gid, ng, float(edge))
    return cloud.with_points(means.astype(np.float32)), cloud.with_points(cloud.points[kept])


def occupied_voxels(cloud: PointCloud, edge: float) -> int:
    if not edge > 0.0:
        raise NonPositiveEdge(f"voxel edge must be positive, got {edge}")
    return int(_group(cloud.points, edge)[1])


def keep_count(n: int, keep_fraction: float) -> int:
    """``round(keep_fraction * n)`` with halves rounded up."""
    return int(math.floor(keep_fraction * n + 0.5))


def random_sample_indices(cloud: PointCloud, keep_fraction: float, seed: int) -> np.ndarray:
    if not 0.0 < keep_fraction <= 1.0:
        raise FractionOutOfRange(f"keep fraction must be in (0, 1], got {keep_fraction}")
    n = len(cloud)
    k = keep_count(n, keep_fraction)
    # seeded shuffle: order points by a per-index random key, keep the first k
    keys = rng.words(seed, rng.STREAM_SHUFFLE, np.arange(n, dtype=np.uint64))
    order = np.argsort(keys, kind="stable")
    return np.sort(order[:k])


def random_sample(cloud: PointCloud, keep_fraction: float, seed: int) -> PointCloud:
    """Exact-count uniform subset of ``round(keep_fraction * N)`` points, in input order."""
    return cloud.with_points(cloud.points[random_sample_indices(cloud, keep_fraction, seed)])


def gaussian_displacements(n: int, sigma: float, seed: int) -> np.ndarray:
    """(n, 3) Normal(0, sigma) offsets; axis ``a`` of point ``i`` uses counter ``3*i + a``."""
    z = rng.normals(seed, rng.STREAM_NOISE, np.arange(3 * n, dtype=np.uint64))
    return z.reshape(n, 3) * sigma


def add_gaussian_noise(cloud: PointCloud, sigma: float, seed: int) -> PointCloud:
    """Displace x, y and z of every point by independent Normal(0, sigma) draws."""
    if not sigma >= 0.0:
        raise NegativeSigma(f"sigma must be >= 0, got {sigma}")
    if sigma == 0.0 or len(cloud) == 0:
        return cloud.with_points(cloud.points.copy())
    out = cloud.points.astype(np.float64)
    out[:, :3] += gaussian_displacements(len(cloud), sigma, seed)
    out[:, 3] = cloud.points[:, 3]
    return cloud.with_points(out.astype(np.float32))


def normalized_point_count(before: PointCloud, after: PointCloud) -> float:
    """``len(after) / len(before)``."""
    if len(before) == 0:
        raise EmptyReference("reference cloud has no points")
    return len(after) / len(before)


def apply(cloud: PointCloud, spec: DegradationSpec) -> PointCloud:
    if spec.kind == "none":
        return cloud.with_points(cloud.points.copy())
    if spec.kind == "voxel_grid":
        return voxel_grid_filter(cloud, spec.param)
    if spec.kind == "uniform":
        return uniform_sample(cloud, spec.param)
    if spec.kind == "random":
        return random_sample(cloud, spec.param, spec.seed)
    return add_gaussian_noise(cloud, spec.param, spec.seed)
