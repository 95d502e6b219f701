"""LiDAR-to-image projection producing sparse depth maps."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import _accel
from .kitti_io import CalibrationSet, DepthMap, PointCloud

NEAR_PLANE = 0.1  # meters; points at or behind this rectified z are dropped


@dataclass(frozen=True)
class Projector:
    calib: CalibrationSet
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")


def project_points(proj: Projector, cloud: PointCloud) -> DepthMap:
    """Splat every point onto its nearest pixel, keeping the smallest depth.

    A point maps to rectified camera coordinates ``R0 @ (Tr @ [x y z 1])``;
    its stored depth is the rectified z, and its pixel is ``P2 @ [cam 1]``
    after perspective division, rounded half-up.
    """
    pts = np.ascontiguousarray(cloud.points[:, :3], dtype=np.float64)
    c = proj.calib
    values = _accel.kernels.project_scatter(
        pts,
        np.ascontiguousarray(c.tr_velo_to_cam),
        np.ascontiguousarray(c.r0_rect),
        np.ascontiguousarray(c.p2),
        proj.width,
        proj.height,
    )
    return DepthMap(values)


def project_points_timed(proj: Projector, cloud: PointCloud) -> tuple[DepthMap, float]:
    """Like :func:`project_points`, also returning elapsed wall time in seconds."""
    start = time.perf_counter()
    depth = project_points(proj, cloud)
    return depth, time.perf_counter() - start


def rectified_depths(calib: CalibrationSet, points: np.ndarray) -> np.ndarray:
    """Rectified-camera z for each point, for checks against projected pixels."""
    pts = np.asarray(points, dtype=np.float64)[:, :3]
    homo = np.hstack([pts, np.ones((len(pts), 1))])
    cam = (calib.r0_rect @ (calib.tr_velo_to_cam @ homo.T)).T
    return cam[:, 2]
