"""Multi-view depth fusion and block localization.

Fusion deprojects every stride-th valid depth pixel with the camera's
calibrated intrinsics and maps it into the world frame with its extrinsic.
Localization is a plain centroid of the points standing above the table; the
synthetic renderer produces no outliers, so no rejection beyond the
above-table margin is applied (the hook point for real sensors is here).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CalibrationError, NoTargetError
from .geometry import Intrinsics, Pose, quat_to_matrix

ABOVE_TABLE_MARGIN = 0.005
MIN_BLOCK_POINTS = 10
DEFAULT_STRIDE = 4


@dataclass(frozen=True)
class CameraCalibration:
    intrinsics: Intrinsics
    extrinsic: Pose  # camera-to-world


@dataclass(frozen=True)
class Calibration:
    cameras: dict  # camera_id -> CameraCalibration

    def __getitem__(self, camera_id: str) -> CameraCalibration:
        try:
            return self.cameras[camera_id]
        except KeyError:
            raise CalibrationError(f"no calibration entry for camera {camera_id!r}") from None


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # N x 3, world frame, meters
    source_camera: np.ndarray  # N ids (str)

    def __post_init__(self):
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud contains non-finite coordinates")


def fuse(frameset, calib: Calibration, stride: int = DEFAULT_STRIDE) -> PointCloud:
    """World-frame point cloud from every camera frame in the frameset.

    Partial framesets fuse whatever frames are present. Pixels with depth 0
    (no hit) are skipped.
    """
    if stride < 1:
        raise ValueError("stride must be a positive integer")
    all_pts, all_src = [], []
    for cam_id in sorted(frameset.frames):
        frame = frameset.frames[cam_id]
        c = calib[cam_id]
        K = c.intrinsics
        depth = frame.depth[::stride, ::stride].astype(float) * 1e-3
        vv, uu = np.meshgrid(
            np.arange(0, frame.depth.shape[0], stride, dtype=float),
            np.arange(0, frame.depth.shape[1], stride, dtype=float),
            indexing="ij",
        )
        valid = depth > 0.0
        d = depth[valid]
        if d.size == 0:
            continue
        x = (uu[valid] - K.cx) * d / K.fx
        y = (vv[valid] - K.cy) * d / K.fy
        pts_cam = np.stack([x, y, d], axis=-1)
        R = quat_to_matrix(c.extrinsic.orientation)
        pts_world = pts_cam @ R.T + c.extrinsic.position
        all_pts.append(pts_world)
        all_src.append(np.full(len(pts_world), cam_id, dtype=object))
    if not all_pts:
        return PointCloud(np.zeros((0, 3)), np.zeros(0, dtype=object))
    return PointCloud(np.concatenate(all_pts), np.concatenate(all_src))


def locate_block(cloud: PointCloud, table_height: float) -> np.ndarray:
    """Centroid of points above the table; needs at least 10 such points."""
    above = cloud.points[:, 2] > table_height + ABOVE_TABLE_MARGIN
    n = int(np.count_nonzero(above))
    if n < MIN_BLOCK_POINTS:
        raise NoTargetError(f"only {n} points above the table (need {MIN_BLOCK_POINTS})")
    return cloud.points[above].mean(axis=0)
