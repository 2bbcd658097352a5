"""Inference-data features: density ratio, noise level and label statistics.

Density is the mean number of points per frame, compared against the mean of
the reference training corpus.  Noise is taken from declared sensor metadata
when available and otherwise (optionally) estimated from local plane fits.

CSV outputs of :func:`dataset_statistics`:

* orientation: ``class,bin_start_deg,bin_end_deg,count`` (10 degree bins over [-180, 180))
* objects per frame: ``class,objects_per_frame,frames``
* heat grid: ``x_cell,y_cell,count`` per class, 1 m cells on the camera ground
  plane (``x_cell = floor(x_cam)``, ``y_cell = floor(z_cam)``)
"""
from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import rng
from .pointcloud_io import ObjectLabel, PointCloud

NOISE_CALIBRATION = 0.92
MAX_NOISE_ANCHORS = 2000
DEFAULT_CLASSES = ("Car", "Pedestrian", "Cyclist")
ORIENTATION_BIN_DEG = 10


class EmptyCorpus(ValueError):
    pass


class EmptyStream(ValueError):
    pass


class TooFewPoints(ValueError):
    pass


@dataclass(frozen=True)
class ReferenceStats:
    mean_points_per_frame: float
    frame_count: int
    source_id: str = ""

    def __post_init__(self):
        if not self.mean_points_per_frame > 0 or self.frame_count < 1:
            raise ValueError("reference needs a positive mean and at least one frame")

    def dumps(self) -> str:
        return (f"mean_points_per_frame={self.mean_points_per_frame!r}\n"
                f"frame_count={self.frame_count}\n"
                f"source_id={self.source_id}\n")

    @classmethod
    def loads(cls, text: str) -> "ReferenceStats":
        kv = _read_kv(text)
        try:
            return cls(float(kv["mean_points_per_frame"]), int(kv["frame_count"]),
                       kv.get("source_id", ""))
        except KeyError as exc:
            raise ValueError(f"reference stats missing key {exc}") from None


@dataclass(frozen=True)
class DataFeatures:
    normalized_point_count: float
    noise_sigma: float | None = None
    frames_analyzed: int = 1

    def __post_init__(self):
        r = float(self.normalized_point_count)
        if not math.isfinite(r) or r < 0.0:
            raise ValueError("normalized_point_count must be finite and >= 0")
        if self.noise_sigma is not None and not self.noise_sigma >= 0.0:
            raise ValueError("noise_sigma must be >= 0")
        if self.frames_analyzed < 1:
            raise ValueError("frames_analyzed must be >= 1")
        object.__setattr__(self, "normalized_point_count", r)

    CSV_HEADER = ("normalized_point_count", "noise_sigma", "frames_analyzed")

    def to_csv(self) -> str:
        sigma = "" if self.noise_sigma is None else repr(float(self.noise_sigma))
        return (",".join(self.CSV_HEADER) + "\n"
                + f"{self.normalized_point_count!r},{sigma},{self.frames_analyzed}\n")

    @classmethod
    def from_csv(cls, text: str) -> "DataFeatures":
        rows = list(csv.DictReader(io.StringIO(text)))
        if len(rows) != 1:
            raise ValueError("features CSV must contain exactly one data row")
        row = rows[0]
        sigma = row.get("noise_sigma", "").strip()
        return cls(float(row["normalized_point_count"]),
                   float(sigma) if sigma else None,
                   int(row.get("frames_analyzed") or 1))


def _read_kv(text: str) -> dict[str, str]:
    kv = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"expected key=value, got {line!r}")
            kv[key.strip()] = value.strip()
    return kv


def reference_stats(frames: Iterable[PointCloud], source_id: str = "") -> ReferenceStats:
    counts = [len(f) for f in frames]
    if not counts:
        raise EmptyCorpus("reference corpus has no frames")
    return ReferenceStats(float(np.mean(counts)), len(counts), source_id)


def reference_stats_from_counts(counts: Sequence[int], source_id: str = "") -> ReferenceStats:
    if not counts:
        raise EmptyCorpus("reference corpus has no frames")
    return ReferenceStats(float(np.mean(counts)), len(counts), source_id)


def estimate_noise_sigma(cloud: PointCloud, k: int = 16, seed: int = 0,
                         max_anchors: int = MAX_NOISE_ANCHORS) -> float:
    """Noise level from local plane fits.

    For up to ``max_anchors`` seeded anchor points, fit a least-squares plane
    to the anchor and its ``k`` nearest neighbours and take the orthogonal
    residual RMS; the median over anchors divided by ``NOISE_CALIBRATION``
    is the estimate.
    """
    if k < 8:
        raise ValueError("k must be at least 8")
    n = len(cloud)
    if n < k + 1:
        raise TooFewPoints(f"need at least {k + 1} points, got {n}")
    xyz = cloud.xyz.astype(np.float64)
    m = min(n, max_anchors)
    keys = rng.words(seed, rng.STREAM_ANCHORS, np.arange(n, dtype=np.uint64))
    anchors = np.sort(np.argsort(keys, kind="stable")[:m])
    _, nb = cKDTree(xyz).query(xyz[anchors], k=k + 1)
    local = xyz[nb]
    local -= local.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", local, local) / (k + 1)
    smallest = np.linalg.eigvalsh(cov)[:, 0]
    rms = np.sqrt(np.clip(smallest, 0.0, None))
    return float(np.median(rms) / NOISE_CALIBRATION)


def analyze_stream(frames: Sequence[PointCloud], ref: ReferenceStats,
                   declared_noise: float | None = None, *, estimate_noise: bool = False,
                   k: int = 16, seed: int = 0, noise_frames: int = 5) -> DataFeatures:
    """Compare a stream against the reference corpus.

    ``noise_sigma`` is the declared value when given; otherwise, with
    ``estimate_noise``, the median estimate over up to ``noise_frames``
    evenly spaced frames; otherwise absent.
    """
    frames = list(frames)
    if not frames:
        raise EmptyStream("no frames to analyze")
    mean_count = float(np.mean([len(f) for f in frames]))
    ratio = mean_count / ref.mean_points_per_frame
    sigma = None
    if declared_noise is not None:
        sigma = float(declared_noise)
    elif estimate_noise:
        picks = np.unique(np.linspace(0, len(frames) - 1, min(noise_frames, len(frames))).astype(int))
        ests = [estimate_noise_sigma(frames[i], k=k, seed=seed)
                for i in picks if len(frames[i]) >= k + 1]
        sigma = float(np.median(ests)) if ests else None
    return DataFeatures(ratio, sigma, len(frames))


# ------------------------------------------------------------ label statistics

@dataclass
class ClassStatistics:
    heat: Counter = field(default_factory=Counter)
    orientation: np.ndarray = field(
        default_factory=lambda: np.zeros(360 // ORIENTATION_BIN_DEG, dtype=np.int64))
    per_frame: Counter = field(default_factory=Counter)


def orientation_bin(rotation_y: float) -> int:
    deg = math.degrees(rotation_y)
    nbins = 360 // ORIENTATION_BIN_DEG
    return int(math.floor((deg + 180.0) / ORIENTATION_BIN_DEG)) % nbins


def dataset_statistics(frames: Iterable[Sequence[ObjectLabel]],
                       classes: Sequence[str] = DEFAULT_CLASSES) -> dict[str, ClassStatistics]:
    """Position heat grid, orientation histogram and objects-per-frame histogram per class."""
    stats = {c: ClassStatistics() for c in classes}
    for labels in frames:
        per_frame = Counter()
        for lab in labels:
            s = stats.get(lab.class_name)
            if s is None:
                continue
            x, _, z = lab.location_cam
            s.heat[(math.floor(x), math.floor(z))] += 1
            s.orientation[orientation_bin(lab.rotation_y)] += 1
            per_frame[lab.class_name] += 1
        for c in classes:
            stats[c].per_frame[per_frame[c]] += 1
    return stats


def orientation_csv(stats: dict[str, ClassStatistics]) -> str:
    out = ["class,bin_start_deg,bin_end_deg,count"]
    for cls, s in stats.items():
        for i, n in enumerate(s.orientation):
            lo = -180 + i * ORIENTATION_BIN_DEG
            out.append(f"{cls},{lo},{lo + ORIENTATION_BIN_DEG},{int(n)}")
    return "\n".join(out) + "\n"


def per_frame_csv(stats: dict[str, ClassStatistics]) -> str:
    out = ["class,objects_per_frame,frames"]
    for cls, s in stats.items():
        for n in sorted(s.per_frame):
            out.append(f"{cls},{n},{s.per_frame[n]}")
    return "\n".join(out) + "\n"


def heat_csv(s: ClassStatistics) -> str:
    out = ["x_cell,y_cell,count"]
    for (x, y) in sorted(s.heat):
        out.append(f"{x},{y},{s.heat[(x, y)]}")
    return "\n".join(out) + "\n"
