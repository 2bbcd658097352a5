"""Time the hot kernels on the numba and pure-numpy backends.

    python benchmarks/bench_kernels.py [--points 120000] [--repeat 5]

Prints one row per kernel with the best-of-N wall time on each backend and
checks that both backends return identical results.  A KITTI-like frame
is synthesized: ground ring plus clutter out to 70 m.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from pcselect import _accel
from pcselect import degrade, detect, geometry, rng
from pcselect.pointcloud_io import PointCloud


def synthetic_frame(n: int, seed: int = 0) -> PointCloud:
    g = np.random.default_rng(seed)
    r = 70.0 * np.sqrt(g.uniform(0.0, 1.0, n))
    t = g.uniform(-np.pi, np.pi, n)
    z = np.where(g.uniform(size=n) < 0.7, -1.7 + g.normal(0, 0.03, n), g.uniform(-1.7, 2.0, n))
    pts = np.c_[r * np.cos(t), r * np.sin(t), z, g.uniform(0, 1, n)]
    return PointCloud(pts.astype(np.float32), "bench")


def random_boxes(n: int, seed: int = 1) -> np.ndarray:
    g = np.random.default_rng(seed)
    return np.c_[g.uniform(-5, 5, (n, 2)), g.uniform(-0.5, 0.5, n), g.uniform(0.5, 6, (n, 3)),
                 g.uniform(-np.pi, np.pi, n)]


def best_of(fn, repeat: int) -> tuple[float, object]:
    fn()  # warm-up (and JIT compile)
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _same(a, b) -> bool:
    if isinstance(a, PointCloud):
        return a == b
    if isinstance(a, list):
        return a == b
    return np.array_equal(np.asarray(a), np.asarray(b))


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--points", type=int, default=120_000)
    p.add_argument("--repeat", type=int, default=5)
    a = p.parse_args(argv)

    cloud = synthetic_frame(a.points)
    boxes = random_boxes(200)
    scene = detect.BaselineDetector()
    counters = np.arange(3 * a.points, dtype=np.uint64)
    kernels = {
        "voxel_grid_filter 0.1": lambda: degrade.voxel_grid_filter(cloud, 0.1),
        "uniform_sample 0.1": lambda: degrade.uniform_sample(cloud, 0.1),
        "random_sample 0.5": lambda: degrade.random_sample(cloud, 0.5, 7),
        "gaussian normals": lambda: rng.normals(7, rng.STREAM_NOISE, counters),
        "iou_matrix 200x200": lambda: geometry.iou_matrix(boxes, boxes),
        "baseline detect": lambda: scene.detect(cloud),
    }
    if not _accel.NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'kernel':<24}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}  same")
    for name, fn in kernels.items():
        times, outs = {}, {}
        for b in ("numba", "numpy"):
            prev = _accel.set_backend(b)
            try:
                times[b], outs[b] = best_of(fn, a.repeat)
            finally:
                _accel.set_backend(prev)
        same = _same(outs["numba"], outs["numpy"])
        if name == "gaussian normals" and not same:
            # last-ulp differences of the inverse normal CDF are expected
            same = np.allclose(outs["numba"], outs["numpy"], rtol=0, atol=1e-14)
        print(f"{name:<24}{1e3 * times['numba']:>10.1f}{1e3 * times['numpy']:>10.1f}"
              f"{times['numpy'] / times['numba']:>8.1f}x  {'yes' if same else 'NO'}")


if __name__ == "__main__":
    main()
