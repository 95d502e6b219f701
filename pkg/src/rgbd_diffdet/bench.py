"""Synthetic LiDAR scene and a numba-vs-numpy timing harness."""

from __future__ import annotations

import json
import os
import statistics
import subprocess
import sys
import time

import numpy as np

from .kitti_io import CalibrationSet, PointCloud

# camera axes from velodyne axes: x right = -y_velo, y down = -z_velo, z fwd = x_velo
VELO_TO_CAM_AXES = np.array(
    [
        [0.0, -1.0, 0.0, 0.0],
        [0.0, 0.0, -1.0, 0.0],
        [1.0, 0.0, 0.0, 0.0],
    ]
)


def synthetic_calibration(fx: float = 700.0, cx: float = 600.0, cy: float = 180.0) -> CalibrationSet:
    p2 = np.array([[fx, 0.0, cx, 0.0], [0.0, fx, cy, 0.0], [0.0, 0.0, 1.0, 0.0]])
    return CalibrationSet(p2=p2, r0_rect=np.eye(3), tr_velo_to_cam=VELO_TO_CAM_AXES)


def synthetic_scan(n_points: int = 120_000, seed: int = 0, beams: int = 64) -> PointCloud:
    """A 360-degree multi-beam sweep over a ground plane with a 40 m wall."""
    rng = np.random.default_rng(seed)
    per_beam = -(-n_points // beams)
    elev = np.deg2rad(np.linspace(-24.9, 2.0, beams))
    az = np.linspace(-np.pi, np.pi, per_beam, endpoint=False)
    el, azg = np.meshgrid(elev, az, indexing="ij")
    el, azg = el.ravel()[:n_points], azg.ravel()[:n_points]
    sensor_height = 1.73
    with np.errstate(divide="ignore"):
        ground = np.where(el < 0, sensor_height / -np.sin(el), np.inf)
    r = np.minimum(ground, 40.0) + rng.normal(0.0, 0.02, n_points)
    x = r * np.cos(el) * np.cos(azg)
    y = r * np.cos(el) * np.sin(azg)
    z = r * np.sin(el)
    refl = rng.uniform(0.0, 1.0, n_points)
    return PointCloud(np.stack([x, y, z, refl], axis=1).astype(np.float32))


def time_pipeline(n_points: int = 120_000, width: int = 1242, height: int = 375, repeats: int = 5) -> dict:
    """Median milliseconds for project and complete under the active backend."""
    from . import _accel
    from .depth_completion import complete
    from .geometry import Projector, project_points

    _accel.warmup()
    proj = Projector(synthetic_calibration(), width, height)
    cloud = synthetic_scan(n_points)
    t_proj, t_comp = [], []
    for _ in range(repeats):
        t0 = time.perf_counter()
        sparse = project_points(proj, cloud)
        t1 = time.perf_counter()
        dense = complete(sparse)
        t2 = time.perf_counter()
        t_proj.append((t1 - t0) * 1e3)
        t_comp.append((t2 - t1) * 1e3)
    return {
        "backend": _accel.BACKEND,
        "points": n_points,
        "ms_project": statistics.median(t_proj),
        "ms_complete": statistics.median(t_comp),
        "valid_dense": dense.valid_count,
        "checksum": float(np.sum(dense.values)),
    }


def compare_backends(n_points: int = 120_000, width: int = 1242, height: int = 375, repeats: int = 5) -> list[dict]:
    """Run :func:`time_pipeline` in a fresh interpreter per backend."""
    results = []
    code = (
        "import json, sys; from rgbd_diffdet.bench import time_pipeline; "
        f"print(json.dumps(time_pipeline({n_points}, {width}, {height}, {repeats})))"
    )
    for pure in ("0", "1"):
        env = dict(os.environ, RGBD_DIFFDET_PURE_NUMPY=pure)
        proc = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        results.append(json.loads(proc.stdout.strip().splitlines()[-1]))
    return results
