"""Lift-splat view transformation.

Frustum points are laid out ``(N, D, H, W)``: camera, bin, feature row,
feature column, matching the score tensors they are weighted by.  Voxel
ranks are flattened ``(z, y, x)`` indices, so a splat output of shape
``(C, Z, Y, X)`` is the rank-indexed buffer viewed per channel.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraRig
from .grid import BinSpec, GridSpec
from .tensor import DimensionError

RAY_EPS = 1e-9


def feature_pixel_coords(rig: CameraRig, feat_size):
    """Image-plane ``(u, v)`` of each feature cell center, arrays of shape ``(H, W)``."""
    H, W = feat_size
    Hi, Wi = rig.image_size
    if Hi % H or Wi % W or Hi // H != Wi // W:
        raise DimensionError(f"feature size {feat_size} is not an integer stride of {rig.image_size}")
    s = Hi // H
    v, u = np.meshgrid((np.arange(H) + 0.5) * s - 0.5, (np.arange(W) + 0.5) * s - 0.5, indexing="ij")
    return u, v


def make_frustum(rig: CameraRig, feat_size, bins: BinSpec, mode: str = "depth") -> np.ndarray:
    """Ego-frame sample points ``(bins.count, H, W, 3)`` for one camera.

    ``mode='depth'`` places points on each pixel ray at camera depths equal to
    the bin centers.  ``mode='height'`` intersects the ray with horizontal
    planes ``z = center``; intersections behind the camera or on rays parallel
    to the plane are NaN (out of grid).
    """
    u, v = feature_pixel_coords(rig, feat_size)
    rays = rig.pixel_rays(u, v)  # (H, W, 3), camera-depth 1 along each ray
    centers = bins.centers
    origin = rig.center
    if mode == "depth":
        pts = origin + centers[:, None, None, None] * rays[None]
    elif mode == "height":
        rz = rays[..., 2]
        flat = np.abs(rz) < RAY_EPS
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (centers[:, None, None] - origin[2]) / np.where(flat, np.nan, rz)[None]
        t = np.where((t > 0) & ~flat[None], t, np.nan)
        pts = origin + t[..., None] * rays[None]
    else:
        raise ValueError(f"unknown frustum mode {mode!r}")
    return pts


def make_frustums(rigs, feat_size, bins: BinSpec, mode: str = "depth") -> np.ndarray:
    """Stacked frustums ``(N, D, H, W, 3)`` for a camera rig list."""
    return np.stack([make_frustum(r, feat_size, bins, mode) for r in rigs])


@dataclass(frozen=True)
class SplatIndex:
    """Precomputed point -> voxel mapping with rank-sorted segments.

    ``ranks[i]`` is the voxel of point ``i`` or ``-1``.  ``order`` lists the
    in-grid points sorted by rank (stable, so ties keep point order);
    ``seg_starts`` / ``seg_ranks`` delimit runs of equal rank in ``order``.
    """

    frustum_shape: tuple[int, int, int, int]  # (N, D, H, W)
    grid: GridSpec
    ranks: np.ndarray
    order: np.ndarray
    seg_starts: np.ndarray
    seg_ranks: np.ndarray

    @property
    def num_points(self) -> int:
        return int(np.prod(self.frustum_shape))

    @property
    def num_in_grid(self) -> int:
        return len(self.order)


def compute_ranks(points: np.ndarray, grid: GridSpec) -> SplatIndex:
    """Voxel rank per frustum point; ``points`` is ``(N, D, H, W, 3)`` or ``(P, 3)``."""
    points = np.asarray(points, dtype=np.float64)
    shape = points.shape[:-1]
    if len(shape) != 4:
        shape = (1, 1, 1, int(np.prod(shape)))
    idx, valid = grid.voxel_indices(points.reshape(-1, 3))
    X, Y, _ = grid.counts
    ranks = np.where(valid, (idx[:, 2] * Y + idx[:, 1]) * X + idx[:, 0], -1)
    inside = np.nonzero(valid)[0]
    order = inside[np.argsort(ranks[inside], kind="stable")]
    sr = ranks[order]
    if len(sr):
        starts = np.concatenate([[0], np.nonzero(sr[1:] != sr[:-1])[0] + 1])
    else:
        starts = np.zeros(0, dtype=np.int64)
    return SplatIndex(tuple(int(s) for s in shape), grid, ranks, order, starts, sr[starts])


def _splat_vjp(feat, score, index: SplatIndex):
    N, C, H, W = feat.shape
    if score.ndim != 4 or (score.shape[0], score.shape[2], score.shape[3]) != (N, H, W):
        raise DimensionError(f"score {score.shape} does not match features {feat.shape}")
    if score.shape != index.frustum_shape:
        raise DimensionError(f"index built for frustum {index.frustum_shape}, got scores {score.shape}")
    D = score.shape[1]
    HW = H * W
    V = index.grid.num_voxels
    order = index.order
    # pixel id (n*HW + h*W + w) of each sorted point
    pix = (order // (D * HW)) * HW + order % HW
    fflat = feat.transpose(0, 2, 3, 1).reshape(N * HW, C)
    w = score.reshape(-1)[order]
    fp = fflat[pix]
    out = np.zeros((V, C))
    if len(order):
        out[index.seg_ranks] = np.add.reduceat(fp * w[:, None], index.seg_starts, axis=0)
    Z, Y, X = index.grid.shape_zyx

    def vjp(g):
        gv = g.reshape(C, V).T
        gp = gv[index.ranks[order]]
        gscore = np.zeros(N * D * HW)
        gscore[order] = np.einsum("pc,pc->p", gp, fp)
        gpts = np.zeros((N * D * HW, C))
        gpts[order] = gp * w[:, None]
        gfeat = gpts.reshape(N, D, H, W, C).sum(axis=1).transpose(0, 3, 1, 2)
        return gfeat, gscore.reshape(score.shape)

    return out.T.reshape(C, Z, Y, X), vjp


def splat_bev_vjp(feat, depth_score, index: SplatIndex):
    if index.grid.counts[2] != 1:
        raise DimensionError("BEV splat needs a grid with a single z layer")
    out, vjp = _splat_vjp(feat, depth_score, index)
    C, _, Y, X = out.shape

    def vjp_bev(g):
        return vjp(g.reshape(C, 1, Y, X))

    return out.reshape(C, Y, X), vjp_bev


def splat_bev(feat, depth_score, index: SplatIndex) -> np.ndarray:
    """Depth-weighted BEV pooling, ``[N,C,H,W] x [N,D,H,W] -> [C,Y,X]``."""
    return splat_bev_vjp(feat, depth_score, index)[0]


def splat_height_vjp(feat, height_score, index: SplatIndex):
    return _splat_vjp(feat, height_score, index)


def splat_height(feat, height_score, index: SplatIndex) -> np.ndarray:
    """Height-score-weighted voxel pooling, ``[N,C,H,W] x [N,Zh,H,W] -> [C,Z,Y,X]``.

    Each voxel receives ``sum_i score_i * feat[pixel(i)]`` over points ``i``
    ranked to it, where ``score_i`` is the point's own height-bin probability.
    """
    return _splat_vjp(feat, height_score, index)[0]


def slice_heightwise(f3d: np.ndarray) -> np.ndarray:
    """``[B,C,Z,Y,X] -> [B,C,Z,Y*X]`` with ``out[..., k*X + x] = f3d[..., k, x]``.

    Concatenating the Y slices along X is exactly a row-major reshape.
    """
    if f3d.ndim != 5:
        raise DimensionError(f"expected [B,C,Z,Y,X], got {f3d.shape}")
    B, C, Z, Y, X = f3d.shape
    return f3d.reshape(B, C, Z, Y * X)


def unslice_heightwise(fh: np.ndarray, Y: int, X: int) -> np.ndarray:
    if fh.ndim != 4 or fh.shape[3] != Y * X:
        raise DimensionError(f"last extent of {fh.shape} is not Y*X = {Y * X}")
    B, C, Z, _ = fh.shape
    return fh.reshape(B, C, Z, Y, X)
