"""Camera model, depth lifting, point clouds, and nearest-neighbor indexing.

Conventions used everywhere downstream:
  - all 3D quantities are float64 ndarrays in meters, world frame
  - a "point" is a (3,) array; clouds are (N, 3) arrays
  - depth values are camera-frame z (not ray length); <= 0 or non-finite
    marks an invalid pixel
  - pixel centers sit at integer (row, col) coordinates
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigurationError, InvalidInputError


def as_point(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (3,):
        raise InvalidInputError(f"expected a 3-vector, got shape {p.shape}")
    return p


def as_points(pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InvalidInputError(f"expected an (N, 3) array, got shape {pts.shape}")
    return pts


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera with a rigid world_from_camera transform.

    rotation/translation map camera-frame points into the world frame:
    p_world = R @ p_cam + t.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigurationError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ConfigurationError("principal point must lie inside the image")
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ConfigurationError("rotation must be 3x3 and translation a 3-vector")
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-9:
            raise ConfigurationError(f"rotation is not orthonormal (|R^T R - I| = {err:.2e})")

    def world_from_camera(self, pts_cam: np.ndarray) -> np.ndarray:
        return pts_cam @ self.rotation.T + self.translation

    def camera_from_world(self, pts_world: np.ndarray) -> np.ndarray:
        return (pts_world - self.translation) @ self.rotation


@dataclass(frozen=True)
class DepthFrame:
    """H x W grid of z-depths in meters; 0, negative, or non-finite = invalid."""

    depth: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "depth", np.asarray(self.depth, dtype=np.float64))
        if self.depth.ndim != 2:
            raise ConfigurationError("depth must be a 2D array")

    @property
    def valid_mask(self) -> np.ndarray:
        return np.isfinite(self.depth) & (self.depth > 0)


@dataclass(frozen=True)
class PointCloud:
    """Unordered set of world-frame points, optionally with per-point pixel provenance."""

    points: np.ndarray
    pixel_index: np.ndarray | None = None  # (N, 2) int (row, col)

    def __post_init__(self):
        object.__setattr__(self, "points", as_points(self.points))
        if self.pixel_index is not None:
            pix = np.asarray(self.pixel_index, dtype=np.int64)
            if pix.shape != (len(self.points), 2):
                raise InvalidInputError("pixel_index must be (N, 2) and match points")
            object.__setattr__(self, "pixel_index", pix)

    def __len__(self) -> int:
        return len(self.points)

    def select(self, indices) -> "PointCloud":
        pix = self.pixel_index[indices] if self.pixel_index is not None else None
        return PointCloud(self.points[indices], pix)


def lift_depth(frame: DepthFrame, cam: CameraModel, mask: np.ndarray | None = None,
               stride: int = 1) -> PointCloud:
    """Back-project valid depth pixels to a world-frame point cloud.

    mask optionally restricts which pixels are lifted; stride > 1 keeps only
    every stride-th row/column (cheap downsampling before clustering).
    """
    depth = frame.depth
    if depth.shape != (cam.height, cam.width):
        raise ConfigurationError(
            f"depth shape {depth.shape} does not match camera {(cam.height, cam.width)}")
    valid = frame.valid_mask
    if mask is not None:
        if mask.shape != depth.shape:
            raise ConfigurationError("mask shape does not match depth")
        valid = valid & mask
    if stride > 1:
        keep = np.zeros_like(valid)
        keep[::stride, ::stride] = True
        valid = valid & keep
    rows, cols = np.nonzero(valid)
    z = depth[rows, cols]
    x = (cols - cam.cx) * z / cam.fx
    y = (rows - cam.cy) * z / cam.fy
    pts_cam = np.column_stack([x, y, z])
    pts_world = cam.world_from_camera(pts_cam)
    return PointCloud(pts_world, pixel_index=np.column_stack([rows, cols]))


def project_point(p, cam: CameraModel) -> tuple[float, float] | None:
    """Project a world point to subpixel (u, v); None if behind the camera or out of view."""
    p_cam = cam.camera_from_world(as_point(p))
    z = p_cam[2]
    if z <= 0:
        return None
    u = cam.fx * p_cam[0] / z + cam.cx
    v = cam.fy * p_cam[1] / z + cam.cy
    if not (-0.5 <= u < cam.width - 0.5 and -0.5 <= v < cam.height - 0.5):
        return None
    return float(u), float(v)


def project_points(pts: np.ndarray, cam: CameraModel):
    """Vectorized projection. Returns (u, v, in_view) arrays."""
    pts_cam = cam.camera_from_world(as_points(pts))
    z = pts_cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * pts_cam[:, 0] / z + cam.cx
        v = cam.fy * pts_cam[:, 1] / z + cam.cy
    in_view = (z > 0) & (u >= -0.5) & (u < cam.width - 0.5) & (v >= -0.5) & (v < cam.height - 0.5)
    return u, v, in_view


class NNIndex:
    """Exact nearest-neighbor index over a PointCloud.

    Ties are broken by the lowest point index so query results are stable
    across runs. Read-only after construction; queries are thread-safe.
    """

    _TIE_EPS = 1e-12

    def __init__(self, cloud: PointCloud):
        if len(cloud) == 0:
            raise InvalidInputError("cannot index an empty cloud")
        self.cloud = cloud
        self._tree = cKDTree(cloud.points)
        self._k = min(len(cloud), 4)

    def __len__(self) -> int:
        return len(self.cloud)

    def nearest(self, p) -> tuple[np.ndarray, float]:
        idx, dist = self.nearest_index(p)
        return self.cloud.points[idx].copy(), dist

    def nearest_index(self, p) -> tuple[int, float]:
        idxs, dists = self.nearest_many(as_point(p)[None, :])
        return int(idxs[0]), float(dists[0])

    def nearest_many(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Batch query: returns (indices, distances), ties to lowest index."""
        pts = as_points(pts)
        dists, idxs = self._tree.query(pts, k=self._k)
        if self._k == 1:
            return idxs.astype(np.int64), dists
        near_best = dists <= dists[:, :1] + self._TIE_EPS
        chosen = np.where(near_best, idxs, len(self.cloud)).min(axis=1)
        rows = np.arange(len(pts))
        pick = np.argmax(idxs == chosen[:, None], axis=1)
        return chosen.astype(np.int64), dists[rows, pick]


def build_index(cloud: PointCloud) -> NNIndex:
    return NNIndex(cloud)


def nearest(idx: NNIndex, p) -> tuple[np.ndarray, float]:
    return idx.nearest(p)
