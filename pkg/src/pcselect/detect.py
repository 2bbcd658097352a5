"""Detectors standing in for trained networks.

``OracleDetector`` replays ground truth with controlled jitter, drops and
false positives; it exists to exercise the evaluation harness.
``BaselineDetector`` is a classical geometric pipeline so the framework can
run end to end without GPUs.  It makes no claim of competitive AP.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from . import rng
from ._accel import njit, use_numba
from .evaluation import Detection, GroundTruth
from .geometry import min_area_rect
from .pointcloud_io import OrientedBox3D, PointCloud

DEFAULT_CLASS_SIZES: Mapping[str, tuple[float, float, float]] = {
    "Car": (3.9, 1.6, 1.56),
    "Pedestrian": (0.8, 0.6, 1.73),
    "Cyclist": (1.76, 0.6, 1.73),
}
DEFAULT_EXPECTED_POINTS: Mapping[str, int] = {"Car": 300, "Pedestrian": 60, "Cyclist": 80}


class ConfigOutOfRange(ValueError):
    pass


class Detector(Protocol):
    id: str
    nominal_latency_s: float

    def detect(self, cloud: PointCloud) -> list[Detection]: ...


# -------------------------------------------------------------------- oracle

class OracleDetector:
    """Ground truth replayed with per-axis center jitter, drops and far-field FPs.

    Each kept object scores ``1 / (1 + center error)``.  False positives are
    placed 150-200 m out and score below every true detection of the corpus.
    The drop decision for object ``j`` compares one fixed uniform against
    ``drop_rate``, so sweeping the rate with one seed gives nested outputs.
    """

    FP_COUNTER = 1 << 40

    def __init__(self, gt: Mapping[str, Sequence[GroundTruth]], jitter_sigma: float = 0.0,
                 drop_rate: float = 0.0, fp_rate: float = 0.0, seed: int = 0,
                 id: str = "oracle", nominal_latency_s: float = 0.01):
        if jitter_sigma < 0 or not 0.0 <= drop_rate <= 1.0 or fp_rate < 0:
            raise ConfigOutOfRange("oracle rates out of range")
        self.id = id
        self.nominal_latency_s = nominal_latency_s
        self._out: dict[str, list[Detection]] = {}
        true_dets: dict[str, list[Detection]] = {}
        for fid in sorted(gt):
            fseed = rng.frame_seed(seed, fid)
            objs = [g for g in gt[fid] if not g.dontcare and g.box is not None]
            counters = np.arange(4 * len(objs), dtype=np.uint64)
            u = rng.uniforms(fseed, rng.STREAM_ORACLE, counters)
            z = rng.normals(fseed, rng.STREAM_ORACLE, counters)
            dets = []
            for j, g in enumerate(objs):
                if u[4 * j] < drop_rate:
                    continue
                off = z[4 * j + 1:4 * j + 4] * jitter_sigma
                b = g.box
                box = OrientedBox3D(tuple(np.add(b.center, off)), b.dims, b.yaw)
                err = float(np.sqrt(np.sum(off * off)))
                dets.append(Detection(box, g.class_name, 1.0 / (1.0 + err)))
            true_dets[fid] = dets
        floor = min((d.score for ds in true_dets.values() for d in ds), default=1.0)
        for fid in sorted(gt):
            fseed = rng.frame_seed(seed, fid)
            classes = sorted({g.class_name for g in gt[fid]
                              if g.class_name in DEFAULT_CLASS_SIZES}) or ["Car"]
            n_fp = rng.poisson(fp_rate, float(rng.uniforms(fseed, rng.STREAM_ORACLE,
                                                           [self.FP_COUNTER])[0]))
            c = np.arange(self.FP_COUNTER + 1, self.FP_COUNTER + 1 + 4 * n_fp, dtype=np.uint64)
            u = rng.uniforms(fseed, rng.STREAM_ORACLE, c)
            fps = []
            for k in range(n_fp):
                r = 150.0 + 50.0 * u[4 * k]
                ang = 2.0 * math.pi * u[4 * k + 1]
                cls = classes[int(u[4 * k + 2] * len(classes))]
                l, w, h = DEFAULT_CLASS_SIZES[cls]
                box = OrientedBox3D((r * math.cos(ang), r * math.sin(ang), h / 2.0), (l, w, h), ang)
                fps.append(Detection(box, cls, 0.99 * floor * u[4 * k + 3]))
            self._out[fid] = true_dets[fid] + fps

    def detect(self, cloud: PointCloud) -> list[Detection]:
        return list(self._out.get(cloud.frame_id, []))


# ------------------------------------------------------------------ baseline

@njit
def _cluster_nb(xy, link):
    """Union-find over points closer than ``link`` in the plane (grid hashed)."""
    n = xy.shape[0]
    parent = np.arange(n)
    if n == 0:
        return parent
    cx = np.floor(xy[:, 0] / link).astype(np.int64)
    cy = np.floor(xy[:, 1] / link).astype(np.int64)
    key = (cx + (1 << 30)) * (1 << 31) + (cy + (1 << 30))
    order = np.argsort(key, kind="mergesort")
    skey = key[order]
    link2 = link * link
    for a in range(n):
        i = order[a]
        for dx in range(-1, 2):
            for dy in range(-1, 2):
                k = (cx[i] + dx + (1 << 30)) * (1 << 31) + (cy[i] + dy + (1 << 30))
                lo = np.searchsorted(skey, k, side="left")
                hi = np.searchsorted(skey, k, side="right")
                for b in range(lo, hi):
                    j = order[b]
                    if j <= i:
                        continue
                    ddx = xy[i, 0] - xy[j, 0]
                    ddy = xy[i, 1] - xy[j, 1]
                    if ddx * ddx + ddy * ddy <= link2:
                        ri = i
                        while parent[ri] != ri:
                            parent[ri] = parent[parent[ri]]
                            ri = parent[ri]
                        rj = j
                        while parent[rj] != rj:
                            parent[rj] = parent[parent[rj]]
                            rj = parent[rj]
                        if ri != rj:
                            if ri < rj:
                                parent[rj] = ri
                            else:
                                parent[ri] = rj
    for i in range(n):
        r = i
        while parent[r] != r:
            r = parent[r]
        parent[i] = r
    return parent


def _cluster_np(xy, link):
    n = xy.shape[0]
    if n == 0:
        return np.arange(0)
    pairs = cKDTree(xy).query_pairs(link, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    # relabel every component by its smallest member index
    root = np.full(comp.max() + 1, n, dtype=np.int64)
    np.minimum.at(root, comp, np.arange(n))
    return root[comp]


def cluster_bev(xy: np.ndarray, link: float) -> np.ndarray:
    """Component label (smallest member index) of each point."""
    xy = np.ascontiguousarray(xy, dtype=np.float64)
    return _cluster_nb(xy, float(link)) if use_numba() else _cluster_np(xy, float(link))


def fit_ground_plane(xyz: np.ndarray, threshold: float, rounds: int = 3,
                     seed_fraction: float = 0.3) -> np.ndarray:
    """Least-squares plane ``z = a x + b y + c`` refit on inliers.

    The first fit uses the lowest ``seed_fraction`` of points; each of the
    ``rounds`` refits reselects points within ``threshold`` of the plane.
    """
    z = xyz[:, 2]
    sel = z <= np.quantile(z, seed_fraction)
    coef = np.array([0.0, 0.0, float(np.median(z[sel]))])
    for _ in range(rounds + 1):
        if sel.sum() < 3:
            break
        A = np.c_[xyz[sel, 0], xyz[sel, 1], np.ones(sel.sum())]
        coef = np.linalg.lstsq(A, z[sel], rcond=None)[0]
        dist = (z - xyz[:, :2] @ coef[:2] - coef[2]) / math.sqrt(1.0 + coef[0] ** 2 + coef[1] ** 2)
        sel = np.abs(dist) < threshold
    return coef


@dataclass
class BaselineDetector:
    ground_threshold: float = 0.2
    link_distance: float = 0.6
    min_cluster_size: int = 10
    class_sizes: Mapping[str, tuple[float, float, float]] = field(
        default_factory=lambda: dict(DEFAULT_CLASS_SIZES))
    expected_points: Mapping[str, int] = field(
        default_factory=lambda: dict(DEFAULT_EXPECTED_POINTS))
    id: str = "baseline"
    nominal_latency_s: float = 0.05

    def __post_init__(self):
        if not (self.ground_threshold > 0 and self.link_distance > 0 and self.min_cluster_size >= 1):
            raise ConfigOutOfRange("baseline thresholds must be positive")
        if not self.class_sizes or any(min(s) <= 0 for s in self.class_sizes.values()):
            raise ConfigOutOfRange("class sizes must be positive")
        if any(self.expected_points.get(c, 0) <= 0 for c in self.class_sizes):
            raise ConfigOutOfRange("every class needs a positive expected point count")
        self._max_length = 2.0 * max(s[0] for s in self.class_sizes.values())

    def _classify(self, l: float, w: float, h: float) -> str | None:
        if l > self._max_length:
            return None
        return min(self.class_sizes, key=lambda c: (
            (l - self.class_sizes[c][0]) ** 2 + (w - self.class_sizes[c][1]) ** 2
            + (h - self.class_sizes[c][2]) ** 2, c))

    def detect(self, cloud: PointCloud) -> list[Detection]:
        xyz = cloud.xyz.astype(np.float64)
        if len(xyz) < 3:
            return []
        # canonical order makes every float reduction independent of input order
        xyz = xyz[np.lexsort((xyz[:, 2], xyz[:, 1], xyz[:, 0]))]
        a, b, c = fit_ground_plane(xyz, self.ground_threshold)
        dist = (xyz[:, 2] - a * xyz[:, 0] - b * xyz[:, 1] - c) / math.sqrt(1.0 + a * a + b * b)
        above = xyz[dist > self.ground_threshold]
        if len(above) == 0:
            return []
        labels = cluster_bev(above[:, :2], self.link_distance)
        order = np.argsort(labels, kind="stable")
        roots, starts, counts = np.unique(labels[order], return_index=True, return_counts=True)
        dets = []
        for start, n in zip(starts, counts):
            if n < self.min_cluster_size:
                continue
            pts = above[order[start:start + n]]
            span = pts[:, :2].max(axis=0) - pts[:, :2].min(axis=0)
            if span.max() > math.sqrt(2.0) * self._max_length:
                continue  # long side certainly exceeds every class
            cx, cy, l, w, yaw = min_area_rect(pts[:, :2])
            top = float(pts[:, 2].max())
            zmin = float(pts[:, 2].min())
            ground = a * cx + b * cy + c
            bottom = min(zmin, ground) if zmin - ground <= 2.0 * self.ground_threshold else zmin
            h = top - bottom
            if min(l, w, h) <= 0.0:
                continue
            cls = self._classify(l, w, h)
            if cls is None:
                continue
            score = min(1.0, n / self.expected_points[cls])
            box = OrientedBox3D((cx, cy, bottom + h / 2.0), (l, w, h), yaw)
            dets.append(Detection(box, cls, float(score)))
        dets.sort(key=lambda d: (-d.score, d.box.center[0], d.box.center[1]))
        return dets
