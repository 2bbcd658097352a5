"""KITTI-style corpus directories.

A corpus is a directory with ``velodyne/NNNNNN.bin`` and, optionally,
``label_2/NNNNNN.txt`` and ``calib/NNNNNN.txt``.  A bare directory of
``.bin`` files is accepted as a velodyne-only corpus.
"""
from __future__ import annotations

import os
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import degrade, rng
from .pointcloud_io import (Calibration, ObjectLabel, PointCloud, load_velodyne, read_calibration,
                            read_labels, write_velodyne_bin)

VELODYNE = "velodyne"
LABELS = "label_2"
CALIB = "calib"


class IoFailure(OSError):
    pass


def velodyne_dir(root: Path) -> Path:
    root = Path(root)
    sub = root / VELODYNE
    return sub if sub.is_dir() else root


def frame_ids(root: Path) -> list[str]:
    d = velodyne_dir(root)
    if not d.is_dir():
        raise IoFailure(f"no such corpus directory: {root}")
    return sorted(p.stem for p in d.glob("*.bin"))


def text_frame_ids(directory: Path) -> list[str]:
    directory = Path(directory)
    if not directory.is_dir():
        raise IoFailure(f"no such directory: {directory}")
    return sorted(p.stem for p in directory.glob("*.txt"))


def iter_clouds(root: Path, ids: Sequence[str] | None = None) -> Iterator[PointCloud]:
    d = velodyne_dir(root)
    for fid in frame_ids(root) if ids is None else ids:
        yield load_velodyne(d / f"{fid}.bin", fid)


def load_labels(path: Path) -> list[ObjectLabel]:
    return read_labels(Path(path).read_text("utf-8"))


def load_calibration(path: Path | None) -> Calibration:
    """Calibration file, or the nominal KITTI axis convention when absent."""
    if path is None or not Path(path).exists():
        return Calibration.nominal()
    return read_calibration(Path(path).read_text("utf-8"))


def atomic_write(path: Path, data: bytes | str) -> None:
    """Write via a temporary file in the same directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def degrade_corpus(src: Path, dst: Path, spec: degrade.DegradationSpec) -> list[float]:
    """Degrade every frame of ``src`` into ``dst``; returns per-frame point ratios.

    Seeded kinds use ``frame_seed(spec.seed, frame_id)`` so results do not
    depend on processing order.  ``label_2`` and ``calib`` are copied
    byte for byte; ``none`` copies the point files byte for byte too.
    """
    src, dst = Path(src), Path(dst)
    try:
        ids = frame_ids(src)
        out_dir = dst / VELODYNE if (src / VELODYNE).is_dir() else dst
        in_dir = velodyne_dir(src)
        out_dir.mkdir(parents=True, exist_ok=True)
        ratios = []
        for fid in ids:
            path = in_dir / f"{fid}.bin"
            if spec.kind == "none":
                shutil.copyfile(path, out_dir / path.name)
                ratios.append(1.0)
                continue
            cloud = load_velodyne(path, fid)
            frame_spec = degrade.DegradationSpec(spec.kind, spec.param,
                                                 rng.frame_seed(spec.seed, fid))
            out = degrade.apply(cloud, frame_spec)
            atomic_write(out_dir / path.name, write_velodyne_bin(out))
            ratios.append(degrade.normalized_point_count(cloud, out) if len(cloud) else 1.0)
        for sub in (LABELS, CALIB):
            if (src / sub).is_dir():
                (dst / sub).mkdir(parents=True, exist_ok=True)
                for p in sorted((src / sub).iterdir()):
                    if p.is_file():
                        shutil.copyfile(p, dst / sub / p.name)
        return ratios
    except OSError as exc:
        if isinstance(exc, IoFailure):
            raise
        raise IoFailure(str(exc)) from exc


def mean_ratio(ratios: Sequence[float]) -> float:
    return float(np.mean(ratios)) if len(ratios) else float("nan")
