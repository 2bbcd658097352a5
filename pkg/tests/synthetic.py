"""Small KITTI-layout corpora written to disk for end-to-end tests."""
from pathlib import Path

import numpy as np

from pcselect.pointcloud_io import (Calibration, ObjectLabel, OrientedBox3D, PointCloud,
                                    lidar_box_to_label, write_calibration, write_labels,
                                    write_velodyne_bin)

from conftest import box_surface_points, ground_points

CAR_DIMS = (4.0, 1.8, 1.5)


def frame_objects(k):
    """Two cars per frame, placed by frame index."""
    return [OrientedBox3D((8.0 + k, 2.0, -1.7 + CAR_DIMS[2] / 2), CAR_DIMS, 0.1 * k),
            OrientedBox3D((18.0, -4.0 - k, -1.7 + CAR_DIMS[2] / 2), CAR_DIMS, 1.2)]


def write_corpus(root, frames=3, seed=0, ground=20_000):
    root = Path(root)
    calib = Calibration.nominal()
    for sub in ("velodyne", "label_2", "calib"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for k in range(frames):
        fid = f"{k:06d}"
        boxes = frame_objects(k)
        parts = [ground_points(ground, seed=seed + 100 * k)]
        for j, b in enumerate(boxes):
            parts.append(box_surface_points(600, b.center, b.dims, b.yaw, seed=seed + 100 * k + j + 1))
        xyz = np.concatenate(parts)
        inten = np.random.default_rng(seed + k).uniform(0, 1, len(xyz))
        cloud = PointCloud(np.c_[xyz, inten].astype(np.float32), fid)
        (root / "velodyne" / f"{fid}.bin").write_bytes(write_velodyne_bin(cloud))
        labels = []
        for b in boxes:
            lab = lidar_box_to_label(b, calib, "Car")
            labels.append(ObjectLabel("Car", 0.0, 0, 0.0, (100.0, 150.0, 200.0, 220.0), lab.dims,
                                      lab.location_cam, lab.rotation_y))
        (root / "label_2" / f"{fid}.txt").write_text(write_labels(labels))
        (root / "calib" / f"{fid}.txt").write_text(write_calibration(calib))
    return root
