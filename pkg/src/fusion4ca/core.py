"""Shared geometry, calibration, box and BEV-grid primitives.

World frame: x forward, y left, z up, meters. Camera frame: x right,
y down, z forward (optical axis). All functions here are pure and
operate on immutable inputs; geometry math runs in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

ROT_TOL = 1e-6


def wrap_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


def yaw_difference(a: float, b: float) -> float:
    """Minimal absolute angular difference, in [0, pi]."""
    return abs(wrap_angle(a - b))


@dataclass
class CameraModel:
    """Pinhole camera: intrinsics plus a rigid world-to-camera transform."""

    intrinsics: np.ndarray  # (3, 3), pixels
    rotation: np.ndarray  # (3, 3), world -> camera
    translation: np.ndarray  # (3,), meters
    image_size: tuple[int, int]  # (height, width), pixels

    def __post_init__(self):
        self.intrinsics = np.asarray(self.intrinsics, dtype=np.float64)
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        self.image_size = (int(self.image_size[0]), int(self.image_size[1]))
        self.validate()

    def validate(self) -> None:
        if self.intrinsics.shape != (3, 3):
            raise ValueError("intrinsics must be 3x3")
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ValueError("extrinsic must be a 3x3 rotation and 3-vector translation")
        r = self.rotation
        if not np.allclose(r @ r.T, np.eye(3), atol=ROT_TOL):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ROT_TOL:
            raise ValueError("rotation determinant must be +1")
        fx, fy = self.intrinsics[0, 0], self.intrinsics[1, 1]
        if fx <= 0 or fy <= 0:
            raise ValueError("focal lengths must be positive")
        cx, cy = self.intrinsics[0, 2], self.intrinsics[1, 2]
        h, w = self.image_size
        if not (0.0 <= cx < w and 0.0 <= cy < h):
            raise ValueError("principal point must lie inside the image")

    @property
    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return pts @ self.rotation.T + self.translation


def look_at_extrinsic(position, target, up=(0.0, 0.0, 1.0)):
    """Build (rotation, translation) for a camera at `position` looking at `target`.

    Camera convention: x right, y down, z forward.
    """
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    n = np.linalg.norm(forward)
    if n < 1e-12:
        raise ValueError("camera target coincides with position")
    z = forward / n
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    xn = np.linalg.norm(x)
    if xn < 1e-9:
        raise ValueError("view direction is parallel to the up vector")
    x = x / xn
    y = np.cross(z, x)
    rotation = np.stack([x, y, z], axis=0)
    translation = -rotation @ position
    return rotation, translation


@dataclass
class Box3D:
    """Oriented 3D box: center/size in meters, yaw about +z in (-pi, pi]."""

    center: np.ndarray  # (3,)
    size: np.ndarray  # (length, width, height)
    yaw: float
    class_id: int
    score: float = 1.0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.size = np.asarray(self.size, dtype=np.float64)
        self.yaw = wrap_angle(float(self.yaw))
        self.class_id = int(self.class_id)
        self.score = float(self.score)
        if self.center.shape != (3,) or self.size.shape != (3,):
            raise ValueError("center and size must be 3-vectors")
        if not np.all(self.size > 0):
            raise ValueError("box size components must be positive")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError("score must lie in [0, 1]")

    def bev_corners(self) -> np.ndarray:
        """(4, 2) corners of the BEV footprint, counter-clockwise."""
        l, w = self.size[0] / 2.0, self.size[1] / 2.0
        corners = np.array([[l, w], [-l, w], [-l, -w], [l, -w]])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return corners @ rot.T + self.center[:2]

    def contains_points(self, points: np.ndarray, margin: float = 0.0) -> np.ndarray:
        """Boolean mask of points (N, 3+) inside the box, with optional margin."""
        pts = np.asarray(points, dtype=np.float64)[:, :3] - self.center
        c, s = math.cos(-self.yaw), math.sin(-self.yaw)
        local = pts.copy()
        local[:, 0] = c * pts[:, 0] - s * pts[:, 1]
        local[:, 1] = s * pts[:, 0] + c * pts[:, 1]
        half = self.size / 2.0 + margin
        return np.all(np.abs(local) <= half, axis=1)


@dataclass
class PointCloud:
    """LiDAR return set in the world frame: (N, 4) float32, columns x,y,z,intensity."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float32)
        if pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError("points must have shape (N, 4)")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite values")
        self.points = pts

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]


@dataclass(frozen=True)
class BEVGridSpec:
    """World-to-grid mapping over half-open intervals [min, max)."""

    x_range: tuple[float, float]
    y_range: tuple[float, float]
    cell_size: float
    channels: int = 1

    def __post_init__(self):
        for lo, hi in (self.x_range, self.y_range):
            if hi <= lo:
                raise ValueError("range max must exceed min")
            n = (hi - lo) / self.cell_size
            if abs(n - round(n)) > 1e-6:
                raise ValueError("range must be exactly divisible by cell_size")
            if round(n) < 8:
                raise ValueError("grid must be at least 8x8")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")

    @property
    def nx(self) -> int:
        return int(round((self.x_range[1] - self.x_range[0]) / self.cell_size))

    @property
    def ny(self) -> int:
        return int(round((self.y_range[1] - self.y_range[0]) / self.cell_size))

    @property
    def shape(self) -> tuple[int, int]:
        """(rows, cols) = (ny, nx); rows index y, cols index x."""
        return (self.ny, self.nx)

    def cell_center(self, row: int, col: int) -> np.ndarray:
        x = self.x_range[0] + (col + 0.5) * self.cell_size
        y = self.y_range[0] + (row + 0.5) * self.cell_size
        return np.array([x, y])


def world_to_cell(xy, spec: BEVGridSpec) -> Optional[tuple[int, int]]:
    """Floor-based binning of a world (x, y) into (row, col); None if out of grid.

    Points exactly on the max boundary are out of grid (half-open intervals).
    """
    x, y = float(xy[0]), float(xy[1])
    if not (spec.x_range[0] <= x < spec.x_range[1]):
        return None
    if not (spec.y_range[0] <= y < spec.y_range[1]):
        return None
    col = int(math.floor((x - spec.x_range[0]) / spec.cell_size))
    row = int(math.floor((y - spec.y_range[0]) / spec.cell_size))
    # guard against float edge cases on the top boundary
    col = min(col, spec.nx - 1)
    row = min(row, spec.ny - 1)
    return (row, col)


def world_to_cell_array(xy: np.ndarray, spec: BEVGridSpec):
    """Vectorized binning. Returns (rows, cols, in_grid_mask) for (N, 2) input."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    cols = np.floor((xy[:, 0] - spec.x_range[0]) / spec.cell_size).astype(np.int64)
    rows = np.floor((xy[:, 1] - spec.y_range[0]) / spec.cell_size).astype(np.int64)
    ok = (
        (xy[:, 0] >= spec.x_range[0])
        & (xy[:, 0] < spec.x_range[1])
        & (xy[:, 1] >= spec.y_range[0])
        & (xy[:, 1] < spec.y_range[1])
    )
    cols = np.clip(cols, 0, spec.nx - 1)
    rows = np.clip(rows, 0, spec.ny - 1)
    return rows, cols, ok


class Projection(NamedTuple):
    """Visible points projected into a camera: continuous pixels plus depth."""

    u: np.ndarray  # (M,)
    v: np.ndarray  # (M,)
    depth: np.ndarray  # (M,) camera-frame z, > 0
    index: np.ndarray  # (M,) index into the source cloud


def project_points(cloud: PointCloud, cam: CameraModel) -> Projection:
    """Project world points through a pinhole camera.

    Keeps only points with positive camera-frame depth and continuous pixel
    coordinates inside [0, width) x [0, height).
    """
    if len(cloud) == 0:
        empty = np.zeros((0,), dtype=np.float64)
        return Projection(empty, empty, empty, np.zeros((0,), dtype=np.int64))
    pts_cam = cam.world_to_camera(cloud.xyz.astype(np.float64))
    z = pts_cam[:, 2]
    front = z > 0
    fx, fy = cam.intrinsics[0, 0], cam.intrinsics[1, 1]
    cx, cy = cam.intrinsics[0, 2], cam.intrinsics[1, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = fx * pts_cam[:, 0] / z + cx
        v = fy * pts_cam[:, 1] / z + cy
    h, w = cam.image_size
    ok = front & (u >= 0) & (u < w) & (v >= 0) & (v < h)
    idx = np.nonzero(ok)[0]
    return Projection(u[idx], v[idx], z[idx], idx.astype(np.int64))


def unproject_pixels(u, v, depth, cam: CameraModel) -> np.ndarray:
    """Inverse pinhole: continuous pixels + camera-frame depth -> world points."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    fx, fy = cam.intrinsics[0, 0], cam.intrinsics[1, 1]
    cx, cy = cam.intrinsics[0, 2], cam.intrinsics[1, 2]
    x = (u - cx) / fx * depth
    y = (v - cy) / fy * depth
    pts_cam = np.stack([x, y, depth], axis=-1)
    return (pts_cam - cam.translation) @ cam.rotation


def bev_center_distance(a: Box3D, b: Box3D) -> float:
    """Euclidean distance between box centers in the BEV plane (z ignored)."""
    return float(math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]))
