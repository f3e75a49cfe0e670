"""Camera projection and LiDAR-derived depth / height supervision maps.

Frames: ego is x-forward, y-left, z-up; camera is x-right, y-down,
z-forward.  A :class:`CameraRig` stores ``[R|t]`` mapping *ego* points into
the camera frame.  To project raw LiDAR-frame points with a single
``K[R|t]`` use :func:`lidar_rig`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import BinSpec
from .tensor import DimensionError

BEHIND_EPS = 1e-9


class BehindCameraError(ValueError):
    pass


@dataclass(frozen=True)
class CameraRig:
    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    image_size: tuple[int, int]  # (H_img, W_img)

    def __post_init__(self):
        K = np.asarray(self.K, dtype=np.float64).reshape(3, 3)
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if K[2, 2] != 1.0 or K[1, 0] or K[2, 0] or K[2, 1]:
            raise ValueError("intrinsics must be upper-triangular with K[2,2] == 1")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")
        if np.max(np.abs(R.T @ R - np.eye(3))) >= 1e-9:
            raise ValueError("rotation is not orthonormal")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "image_size", (int(self.image_size[0]), int(self.image_size[1])))

    @classmethod
    def identity(cls, image_size=(1, 1)) -> "CameraRig":
        return cls(np.eye(3), np.eye(3), np.zeros(3), image_size)

    @classmethod
    def looking(cls, yaw: float, position, image_size, hfov_deg: float = 90.0,
                pitch: float = 0.0) -> "CameraRig":
        """Pinhole camera at ego ``position`` facing ``yaw`` (rad, CCW from +x).

        Positive ``pitch`` tilts the optical axis downward.
        """
        H, W = image_size
        f = (W / 2.0) / np.tan(np.deg2rad(hfov_deg) / 2.0)
        K = np.array([[f, 0.0, W / 2.0], [0.0, f, H / 2.0], [0.0, 0.0, 1.0]])
        cy, sy, cp, sp = np.cos(yaw), np.sin(yaw), np.cos(pitch), np.sin(pitch)
        forward = np.array([cp * cy, cp * sy, -sp])
        right = np.array([sy, -cy, 0.0])
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])
        t = -R @ np.asarray(position, dtype=np.float64)
        return cls(K, R, t, (H, W))

    @property
    def center(self) -> np.ndarray:
        """Camera optical center in the ego frame."""
        return -self.R.T @ self.t

    def scaled(self, stride: int) -> "CameraRig":
        """Same camera seen at ``1/stride`` resolution (pixel ``i`` covers ``[i*s, (i+1)*s)``)."""
        H, W = self.image_size
        if H % stride or W % stride:
            raise DimensionError(f"image size {self.image_size} not divisible by stride {stride}")
        S = np.diag([1.0 / stride, 1.0 / stride, 1.0])
        return CameraRig(S @ self.K, self.R, self.t, (H // stride, W // stride))

    def pixel_rays(self, u, v) -> np.ndarray:
        """Ego-frame ray directions (unnormalized, camera-z component 1) through pixels."""
        uv1 = np.stack([np.asarray(u, float), np.asarray(v, float), np.ones(np.shape(u))], axis=-1)
        cam = uv1 @ np.linalg.inv(self.K).T
        return cam @ self.R


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # (N, 3) in the sensor frame
    sensor_to_ego: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "sensor_to_ego", np.asarray(self.sensor_to_ego, dtype=np.float64).reshape(4, 4))

    def ego_points(self) -> np.ndarray:
        T = self.sensor_to_ego
        return self.points @ T[:3, :3].T + T[:3, 3]


@dataclass
class PixelMap:
    """Per-pixel values with an explicit validity flag (no numeric sentinel)."""

    values: np.ndarray  # (H, W)
    valid: np.ndarray  # (H, W) bool


class HeightMap(PixelMap):
    """Ego-frame height ``z_e`` of the nearest LiDAR return per pixel."""


class DepthMap(PixelMap):
    """Camera depth ``d`` of the nearest LiDAR return per pixel."""


def lidar_rig(rig: CameraRig, sensor_to_ego: np.ndarray) -> CameraRig:
    """Compose ``rig`` with ``sensor_to_ego`` so ``[R|t]`` maps LiDAR-frame points."""
    T = np.asarray(sensor_to_ego, dtype=np.float64)
    return CameraRig(rig.K, rig.R @ T[:3, :3], rig.R @ T[:3, 3] + rig.t, rig.image_size)


def project_points(rig: CameraRig, points: np.ndarray):
    """Vectorized projection; returns ``(u, v, d)`` arrays with no validity filtering."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = p @ rig.R.T + rig.t
    h = cam @ rig.K.T
    d = h[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        return h[:, 0] / d, h[:, 1] / d, d


def project_point(rig: CameraRig, p) -> tuple[float, float, float]:
    """Solve ``d [u, v, 1]^T = K [R|t] p`` for one point."""
    p = np.asarray(p, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(p)):
        raise ValueError("point must be finite")
    u, v, d = project_points(rig, p[None])
    if d[0] <= BEHIND_EPS:
        raise BehindCameraError(f"point {p.tolist()} has depth {d[0]:.3g} <= {BEHIND_EPS}")
    return float(u[0]), float(v[0]), float(d[0])


def back_project(rig: CameraRig, u: float, v: float, d: float) -> np.ndarray:
    cam = d * np.linalg.solve(rig.K, np.array([u, v, 1.0]))
    return rig.R.T @ (cam - rig.t)


def nearest_returns(rig: CameraRig, cloud: PointCloud, frame: str = "ego"):
    """Per-pixel nearest return: ``(rows, cols, depth, z_ego)`` for each hit pixel.

    ``frame='ego'`` moves points to ego before applying ``rig``; ``frame='lidar'``
    treats ``rig``'s extrinsics as LiDAR-to-camera.  Depth ties resolve to the
    lower ``z_ego`` so the result is independent of point order.
    """
    ego = cloud.ego_points()
    if frame == "ego":
        u, v, d = project_points(rig, ego)
    elif frame == "lidar":
        u, v, d = project_points(rig, cloud.points)
    else:
        raise ValueError(f"unknown frame {frame!r}")
    H, W = rig.image_size
    keep = d > BEHIND_EPS
    with np.errstate(invalid="ignore"):
        col = np.floor(u)
        row = np.floor(v)
    keep &= (col >= 0) & (col < W) & (row >= 0) & (row < H)
    row, col = row[keep].astype(np.int64), col[keep].astype(np.int64)
    d, z = d[keep], ego[keep, 2]
    pix = row * W + col
    order = np.lexsort((z, d, pix))
    pix, d, z = pix[order], d[order], z[order]
    first = np.ones(len(pix), dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    pix, d, z = pix[first], d[first], z[first]
    return pix // W, pix % W, d, z


def _pixel_map(cls, rig, rows, cols, vals):
    H, W = rig.image_size
    values = np.zeros((H, W))
    valid = np.zeros((H, W), dtype=bool)
    values[rows, cols] = vals
    valid[rows, cols] = True
    return cls(values, valid)


def build_height_map(rig: CameraRig, cloud: PointCloud, frame: str = "ego") -> HeightMap:
    rows, cols, _, z = nearest_returns(rig, cloud, frame)
    return _pixel_map(HeightMap, rig, rows, cols, z)


def build_depth_map(rig: CameraRig, cloud: PointCloud, frame: str = "ego") -> DepthMap:
    rows, cols, d, _ = nearest_returns(rig, cloud, frame)
    return _pixel_map(DepthMap, rig, rows, cols, d)


def discretize_supervision(pmap: PixelMap, bins: BinSpec, clamp: bool = True) -> np.ndarray:
    """One-hot ``(bins.count, H, W)`` targets; invalid pixels are all-zero."""
    idx = bins.index(pmap.values, clamp=clamp)
    use = pmap.valid & (idx >= 0)
    out = np.zeros((bins.count,) + pmap.values.shape)
    r, c = np.nonzero(use)
    out[idx[r, c], r, c] = 1.0
    return out
