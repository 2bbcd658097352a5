"""3D detection benchmark: rotated IoU matching and AP at 40 recall positions.

Difficulty bins follow the KITTI devkit (min 2D box height in px, max
occlusion level, max truncation):

    easy      40  0  0.15
    moderate  25  1  0.30
    hard      25  2  0.50

Evaluation at a difficulty counts every ground-truth object of that bin or
an easier one; objects of the class in harder bins, objects of neighbouring
classes (Van for Car) and objects too small for any bin are "ignorable":
a detection matched to one is neither a true nor a false positive.
Detections whose footprint is at least half covered by a 3D DontCare
region are dropped before matching.  Matches are pooled across frames.

Report CSV columns: ``class,difficulty,ap_percent,tp,fp,fn``; cells with no
ground truth and no detections report ``NA``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geometry import bev_cover_matrix, iou_matrix
from .pointcloud_io import (Calibration, ObjectLabel, OrientedBox3D, boxes_to_array,
                            label_to_lidar_box)

DIFFICULTIES = ("easy", "moderate", "hard")
MIN_HEIGHT = (40.0, 25.0, 25.0)
MAX_OCCLUSION = (0, 1, 2)
MAX_TRUNCATION = (0.15, 0.30, 0.50)
DONTCARE_COVER = 0.5


class MixedClasses(ValueError):
    pass


class FrameIdMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Detection:
    box: OrientedBox3D
    class_name: str
    score: float


@dataclass(frozen=True)
class GroundTruth:
    box: OrientedBox3D | None  # None for DontCare regions without 3D extent
    class_name: str
    difficulty: str            # easy / moderate / hard / ignored
    dontcare: bool = False


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: Mapping[str, float] = field(
        default_factory=lambda: {"Car": 0.7, "Pedestrian": 0.5, "Cyclist": 0.5})
    recall_positions: int = 40
    neighbor_ignore: Mapping[str, frozenset] = field(
        default_factory=lambda: {"Car": frozenset({"Van"})})

    def __post_init__(self):
        if self.recall_positions < 1:
            raise ValueError("recall_positions must be >= 1")
        for cls, t in self.iou_thresholds.items():
            if not 0.0 < t <= 1.0:
                raise ValueError(f"IoU threshold for {cls} outside (0, 1]")


@dataclass(frozen=True)
class ReportEntry:
    class_name: str
    difficulty: str
    ap_percent: float
    tp: int
    fp: int
    fn: int
    applicable: bool = True

    def csv_row(self) -> str:
        ap = f"{self.ap_percent:.4f}" if self.applicable else "NA"
        return f"{self.class_name},{self.difficulty},{ap},{self.tp},{self.fp},{self.fn}"


@dataclass(frozen=True)
class EvalReport:
    entries: tuple[ReportEntry, ...]

    def get(self, class_name: str, difficulty: str) -> ReportEntry:
        for e in self.entries:
            if e.class_name == class_name and e.difficulty == difficulty:
                return e
        raise KeyError((class_name, difficulty))

    def to_csv(self) -> str:
        lines = ["class,difficulty,ap_percent,tp,fp,fn"] + [e.csv_row() for e in self.entries]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class MatchResult:
    # per input detection: "tp", "fp", or "ignored"
    labels: tuple[str, ...]
    fn: int
    num_gt: int


# ---------------------------------------------------------------- difficulty

def assign_difficulty(label: ObjectLabel) -> str:
    height = label.bbox_height
    for i, name in enumerate(DIFFICULTIES):
        if (height >= MIN_HEIGHT[i] and label.occlusion <= MAX_OCCLUSION[i]
                and label.truncation <= MAX_TRUNCATION[i]):
            return name
    return "ignored"


def ground_truth_from_labels(labels: Sequence[ObjectLabel], calib: Calibration) -> list[GroundTruth]:
    out = []
    for lab in labels:
        if lab.is_dontcare:
            box = label_to_lidar_box(lab, calib) if min(lab.dims) > 0 else None
            out.append(GroundTruth(box, lab.class_name, "ignored", dontcare=True))
        else:
            out.append(GroundTruth(label_to_lidar_box(lab, calib), lab.class_name,
                                   assign_difficulty(lab)))
    return out


def detections_from_labels(labels: Sequence[ObjectLabel], calib: Calibration) -> list[Detection]:
    """Detections from score-extended label lines (missing score counts as 1)."""
    return [Detection(label_to_lidar_box(l, calib), l.class_name,
                      1.0 if l.score is None else l.score)
            for l in labels if not l.is_dontcare]


# ------------------------------------------------------------------ matching

def _rank(difficulty: str) -> int:
    return DIFFICULTIES.index(difficulty) if difficulty in DIFFICULTIES else len(DIFFICULTIES)


def match_detections(dets: Sequence[Detection], gts: Sequence[GroundTruth], class_name: str,
                     difficulty: str, config: EvalConfig = EvalConfig()) -> MatchResult:
    """Greedy matching in descending score order (input order breaks ties)."""
    if any(d.class_name != class_name for d in dets):
        raise MixedClasses(f"all detections must be of class {class_name!r}")
    thr = config.iou_thresholds[class_name]
    level = _rank(difficulty)
    neighbors = config.neighbor_ignore.get(class_name, frozenset())

    counted, ignorable = [], []
    for g in gts:
        if g.dontcare or g.box is None:
            continue
        if g.class_name == class_name:
            (counted if _rank(g.difficulty) <= level else ignorable).append(g)
        elif g.class_name in neighbors:
            ignorable.append(g)

    labels = ["fp"] * len(dets)
    if dets:
        det_rows = boxes_to_array(d.box for d in dets)
        care = [g.box for g in gts if g.dontcare and g.box is not None]
        dropped = np.zeros(len(dets), dtype=bool)
        if care:
            dropped = (bev_cover_matrix(det_rows, boxes_to_array(care)) >= DONTCARE_COVER).any(axis=1)
        iou_c = iou_matrix(det_rows, boxes_to_array(g.box for g in counted))
        iou_i = iou_matrix(det_rows, boxes_to_array(g.box for g in ignorable))
        used_c = np.zeros(len(counted), dtype=bool)
        used_i = np.zeros(len(ignorable), dtype=bool)
        order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
        for i in order:
            if dropped[i]:
                labels[i] = "ignored"
                continue
            j = _best(iou_c[i], used_c, thr)
            if j >= 0:
                used_c[j] = True
                labels[i] = "tp"
                continue
            j = _best(iou_i[i], used_i, thr)
            if j >= 0:
                used_i[j] = True
                labels[i] = "ignored"
    tp = labels.count("tp")
    return MatchResult(tuple(labels), len(counted) - tp, len(counted))


def _best(row: np.ndarray, used: np.ndarray, thr: float) -> int:
    if row.size == 0:
        return -1
    cand = np.where(used | (row < thr), -1.0, row)
    j = int(np.argmax(cand))
    return j if cand[j] >= thr else -1


# ------------------------------------------------------------------------ AP

def average_precision_r40(tp_flags: Sequence[bool], total_gt: int,
                          recall_positions: int = 40) -> float:
    """Interpolated AP over recall positions ``i / R``, i = 1..R.

    ``tp_flags`` lists counted detections in descending score order.  The
    interpolated precision at recall r is the best precision at any operating
    point with recall >= r (0 if none).
    """
    if total_gt < 0:
        raise ValueError("total_gt must be >= 0")
    flags = np.asarray(tp_flags, dtype=bool)
    if total_gt == 0:
        return 0.0 if flags.size else 1.0
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    precision = tp / np.arange(1, flags.size + 1)
    best_after = np.maximum.accumulate(precision[::-1])[::-1]
    R = recall_positions
    # recall test in integers: tp_k / G >= i / R  <=>  tp_k * R >= i * G
    need = np.arange(1, R + 1) * total_gt
    first = np.searchsorted(tp * R, need, side="left")
    reached = first < flags.size
    return float(best_after[first[reached]].sum() / R)


# ---------------------------------------------------------------- evaluation

def evaluate(detections: Mapping[str, Sequence[Detection]],
             ground_truth: Mapping[str, Sequence[GroundTruth]],
             config: EvalConfig = EvalConfig()) -> EvalReport:
    """Pool per-frame matches for every (class, difficulty) cell."""
    if set(detections) != set(ground_truth):
        missing = sorted(set(detections) ^ set(ground_truth))
        raise FrameIdMismatch(f"frames present on one side only: {missing[:5]}")
    frame_ids = sorted(detections)
    entries = []
    for cls in config.iou_thresholds:
        for diff in DIFFICULTIES:
            pooled = []
            n_gt = 0
            for fid in frame_ids:
                dets = [d for d in detections[fid] if d.class_name == cls]
                res = match_detections(dets, ground_truth[fid], cls, diff, config)
                n_gt += res.num_gt
                for k, (d, lab) in enumerate(zip(dets, res.labels)):
                    if lab != "ignored":
                        pooled.append((-d.score, fid, k, lab == "tp"))
            pooled.sort()
            flags = [p[3] for p in pooled]
            tp = sum(flags)
            ap = average_precision_r40(flags, n_gt, config.recall_positions)
            entries.append(ReportEntry(cls, diff, 100.0 * ap, tp, len(flags) - tp, n_gt - tp,
                                       applicable=bool(n_gt or flags)))
    return EvalReport(tuple(entries))
