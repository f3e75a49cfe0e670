"""Naive reference implementations and the oracle comparison suite.

Every oracle here is written as plain scalar loops with its own index
arithmetic, so it shares no vectorization tricks with the optimized code it
checks.  They are slow by design and only meant for small instances.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .attention import DAParams, da_forward
from .geometry import CameraRig, PointCloud, build_depth_map, build_height_map
from .grid import BinSpec, GridSpec
from .metrics import OccupancyGrid, confusion_matrix, miou
from .ops import avgpool_axis, bilinear_resize, conv1d_depthwise, conv2d, mlp_forward
from .scenegen import Box, voxelize
from .view_transform import (compute_ranks, make_frustums, slice_heightwise, splat_bev, splat_height,
                             unslice_heightwise)

# -- oracles -------------------------------------------------------------------------------------


def naive_conv1d(x, kernel):
    """Quadruple loop: ``out[b, c, j] = sum_k x[b, c, j + k] * kernel[b, c, k]``."""
    B, C, L = x.shape
    K = kernel.shape[2]
    out = np.zeros((B, C, L - K + 1))
    for b in range(B):
        for c in range(C):
            for j in range(L - K + 1):
                for k in range(K):
                    out[b, c, j] += x[b, c, j + k] * kernel[b, c, k]
    return out


def naive_mean(x, axis):
    """Running-sum mean along ``axis`` (kept with extent 1)."""
    xm = np.moveaxis(np.asarray(x), axis, -1)
    out = np.zeros(xm.shape[:-1])
    for idx in np.ndindex(out.shape):
        total = 0.0
        for v in xm[idx]:
            total += v
        out[idx] = total / xm.shape[-1]
    return np.expand_dims(out, axis)


def naive_voxel_of(point, grid: GridSpec):
    """``(ix, iy, iz)`` of the voxel containing ``point`` or None (half-open cells)."""
    out = []
    for a in range(3):
        c = float(point[a])
        lo, hi, n = grid.bounds[a], grid.bounds[a + 3], grid.counts[a]
        if not (lo <= c < hi):  # also rejects NaN
            return None
        i = math.floor((c - lo) / ((hi - lo) / n))
        if i < 0 or i >= n:
            return None
        out.append(i)
    return tuple(out)


def naive_splat(feat, score, points, grid: GridSpec) -> np.ndarray:
    """Scatter every frustum point into its voxel: ``[C, Z, Y, X]``.

    ``points`` is ``(N, D, H, W, 3)``; point ``(n, d, h, w)`` carries
    ``score[n, d, h, w] * feat[n, :, h, w]``.
    """
    N, C, H, W = feat.shape
    D = score.shape[1]
    X, Y, Z = grid.counts
    out = np.zeros((C, Z, Y, X))
    for n in range(N):
        for d in range(D):
            for h in range(H):
                for w in range(W):
                    v = naive_voxel_of(points[n, d, h, w], grid)
                    if v is None:
                        continue
                    ix, iy, iz = v
                    for c in range(C):
                        out[c, iz, iy, ix] += score[n, d, h, w] * feat[n, c, h, w]
    return out


def naive_circular_da(x, kernel, pos, axis):
    """``out[i] = sum_k kernel[k] * (x[(i+k) mod L] + pos[(i+k) mod L])`` along ``axis``.

    ``x`` is ``[B, C, H, W]``, ``kernel`` ``[B, C, L]``, ``pos`` length ``L``.
    """
    B, C, H, W = x.shape
    L = x.shape[axis]
    pos = np.asarray(pos).reshape(-1)
    out = np.zeros_like(x)
    for b in range(B):
        for c in range(C):
            for i in range(H):
                for j in range(W):
                    acc = 0.0
                    for k in range(L):
                        if axis == 2:
                            s = (i + k) % L
                            acc += kernel[b, c, k] * (x[b, c, s, j] + pos[s])
                        else:
                            s = (j + k) % L
                            acc += kernel[b, c, k] * (x[b, c, i, s] + pos[s])
                    out[b, c, i, j] = acc
    return out


def naive_nearest_returns(rig: CameraRig, cloud: PointCloud):
    """Per-pixel scan keeping the smallest-depth return: ``(depth, height, valid)`` maps."""
    H, W = rig.image_size
    depth = np.zeros((H, W))
    height = np.zeros((H, W))
    valid = np.zeros((H, W), dtype=bool)
    ego = cloud.ego_points()
    for p in ego:
        cam = [sum(rig.R[r, k] * p[k] for k in range(3)) + rig.t[r] for r in range(3)]
        hom = [sum(rig.K[r, k] * cam[k] for k in range(3)) for r in range(3)]
        d = hom[2]
        if not d > 1e-9:
            continue
        col, row = math.floor(hom[0] / d), math.floor(hom[1] / d)
        if not (0 <= col < W and 0 <= row < H):
            continue
        z = p[2]
        if (not valid[row, col] or d < depth[row, col]
                or (d == depth[row, col] and z < height[row, col])):
            depth[row, col], height[row, col], valid[row, col] = d, z, True
    return depth, height, valid


def naive_confusion(pred, gt, num_classes, mask=None):
    """Triple loop over ``(z, y, x)``: ``cm[g, p]``."""
    Z, Y, X = gt.shape
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for z in range(Z):
        for y in range(Y):
            for x in range(X):
                if mask is not None and not mask[z, y, x]:
                    continue
                cm[int(gt[z, y, x]), int(pred[z, y, x])] += 1
    return cm


def naive_miou(pred, gt, num_classes, mask=None, empty_class=0):
    cm = naive_confusion(pred, gt, num_classes, mask)
    ious = []
    for c in range(num_classes):
        if c == empty_class:
            continue
        tp = cm[c, c]
        fp = sum(cm[g, c] for g in range(num_classes)) - tp
        fn = sum(cm[c, p] for p in range(num_classes)) - tp
        if tp + fp + fn > 0:
            ious.append(tp / (tp + fp + fn))
    return sum(ious) / len(ious) if ious else float("nan")


def naive_voxelize(objects, grid: GridSpec) -> np.ndarray:
    """Point-in-box test of every voxel center against every box (last box wins)."""
    X, Y, Z = grid.counts
    lo, vs = grid.lower, grid.voxel_size
    labels = np.zeros((Z, Y, X), dtype=np.uint8)
    for iz in range(Z):
        for iy in range(Y):
            for ix in range(X):
                c = (lo[0] + (ix + 0.5) * vs[0], lo[1] + (iy + 0.5) * vs[1], lo[2] + (iz + 0.5) * vs[2])
                for b in objects:
                    if all(b.lo[a] <= c[a] < b.hi[a] for a in range(3)):
                        labels[iz, iy, ix] = b.class_id
    return labels


def naive_slice(f3d):
    """Concatenate Y slices along X by explicit index copying."""
    B, C, Z, Y, X = f3d.shape
    out = np.empty((B, C, Z, Y * X), dtype=f3d.dtype)
    for k in range(Y):
        for x in range(X):
            out[..., k * X + x] = f3d[..., k, x]
    return out


def naive_mlp(x, layers):
    """Row-by-row dense layers with an explicit positive-part between layers."""
    rows = []
    for r in np.asarray(x):
        h = list(r)
        for li, (w, b) in enumerate(layers):
            h = [sum(h[i] * w[i, o] for i in range(w.shape[0])) + b[o] for o in range(w.shape[1])]
            if li < len(layers) - 1:
                h = [max(v, 0.0) for v in h]
        rows.append(h)
    return np.array(rows)


def naive_conv2d(x, w, b, stride=1, padding=0):
    B, Ci, H, W = x.shape
    Co, _, kh, kw = w.shape
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    out = np.zeros((B, Co, Ho, Wo))
    for n in range(B):
        for o in range(Co):
            for i in range(Ho):
                for j in range(Wo):
                    acc = b[o]
                    for c in range(Ci):
                        for di in range(kh):
                            for dj in range(kw):
                                r, s = i * stride + di - padding, j * stride + dj - padding
                                if 0 <= r < H and 0 <= s < W:
                                    acc += w[o, c, di, dj] * x[n, c, r, s]
                    out[n, o, i, j] = acc
    return out


def naive_bilinear(x, out_hw):
    """Half-pixel-center bilinear sampling with edge clamping, one output pixel at a time."""
    H, W = x.shape[-2:]
    Ho, Wo = out_hw
    out = np.zeros(x.shape[:-2] + (Ho, Wo))

    def taps(o, n_in, n_out):
        s = min(max((o + 0.5) * n_in / n_out - 0.5, 0.0), n_in - 1)
        i0 = math.floor(s)
        return i0, min(i0 + 1, n_in - 1), s - i0

    for i in range(Ho):
        y0, y1, fy = taps(i, H, Ho)
        for j in range(Wo):
            x0, x1, fx = taps(j, W, Wo)
            out[..., i, j] = ((1 - fy) * ((1 - fx) * x[..., y0, x0] + fx * x[..., y0, x1])
                              + fy * ((1 - fx) * x[..., y1, x0] + fx * x[..., y1, x1]))
    return out


# -- random instances ----------------------------------------------------------------------------


def random_rig(rng, image_size=(16, 16)) -> CameraRig:
    yaw = rng.uniform(-np.pi, np.pi)
    pos = (rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.2, 1.5))
    return CameraRig.looking(yaw, pos, image_size, hfov_deg=rng.uniform(60, 110), pitch=rng.uniform(-0.3, 0.3))


def random_splat_case(rng, max_feat=8, max_grid=(16, 16, 8)):
    """Features, scores, frustum points and grid for one randomized splat instance."""
    H = int(rng.integers(1, max_feat + 1))
    W = int(rng.integers(1, max_feat + 1))
    N = int(rng.integers(1, 4))
    C = int(rng.integers(1, 5))
    D = int(rng.integers(1, 7))
    counts = (int(rng.integers(1, max_grid[0] + 1)), int(rng.integers(1, max_grid[1] + 1)),
              int(rng.integers(1, max_grid[2] + 1)))
    grid = GridSpec((-4.0, -4.0, -1.0, 4.0, 4.0, 3.0), counts)
    if rng.random() < 0.5:
        stride = int(rng.integers(1, 3))
        rigs = [random_rig(rng, (H * stride, W * stride)) for _ in range(N)]
        if rng.random() < 0.5:
            pts = make_frustums(rigs, (H, W), BinSpec(D, 0.3, 7.0), "depth")
        else:
            pts = make_frustums(rigs, (H, W), BinSpec(D, -1.0, 3.0), "height")
    else:
        pts = rng.uniform(grid.lower - 1.0, grid.upper + 1.0, size=(N, D, H, W, 3))
        # put some points exactly on voxel faces to exercise the half-open convention
        snap = rng.random((N, D, H, W)) < 0.2
        k = rng.integers(0, np.array(counts) + 1, size=(N, D, H, W, 3))
        faces = grid.lower + k * grid.voxel_size
        pts = np.where(snap[..., None], faces, pts)
    feat = rng.standard_normal((N, C, H, W))
    score = rng.random((N, D, H, W))
    score /= score.sum(axis=1, keepdims=True)
    return feat, score, pts, grid


def random_cloud(rng, n=400) -> PointCloud:
    pts = rng.uniform((-8, -8, -1), (8, 8, 4), size=(n, 3))
    # duplicate some points along rays to force depth competition
    dup = pts[: n // 4] * rng.uniform(1.05, 2.0, size=(n // 4, 1))
    T = np.eye(4)
    T[:3, 3] = rng.uniform(-0.5, 0.5, size=3)
    return PointCloud(np.concatenate([pts, dup]) - T[:3, 3], T)


# -- suite -----------------------------------------------------------------------------------------


@dataclass
class OracleResult:
    name: str
    cases: int
    max_error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def line(self) -> str:
        return (f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.cases} cases, "
                f"max err {self.max_error:.3e} (tol {self.tolerance:g}), {self.seconds:.2f}s")


def _run(name, cases, tol, fn, rng):
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(cases):
        worst = max(worst, float(fn(rng)))
    return OracleResult(name, cases, worst, tol, time.perf_counter() - t0)


def check_splat(rng) -> float:
    feat, score, pts, grid = random_splat_case(rng)
    idx = compute_ranks(pts, grid)
    ref = naive_splat(feat, score, pts, grid)
    err = float(np.max(np.abs(splat_height(feat, score, idx) - ref), initial=0.0))
    flat = GridSpec(grid.bounds, grid.counts[:2] + (1,))
    idx_bev = compute_ranks(pts, flat)
    ref_bev = naive_splat(feat, score, pts, flat)[:, 0]
    return max(err, float(np.max(np.abs(splat_bev(feat, score, idx_bev) - ref_bev), initial=0.0)))


def check_mass(rng) -> float:
    """Frustum entirely inside the grid: per-channel totals are conserved."""
    N, C, D, H, W = 2, 3, 5, 4, 6
    grid = GridSpec((-2.0, -2.0, -2.0, 2.0, 2.0, 2.0), (8, 8, 4))
    pts = rng.uniform(-1.999, 1.999, size=(N, D, H, W, 3))
    feat = rng.standard_normal((N, C, H, W))
    logits = rng.standard_normal((N, D, H, W))
    score = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    out = splat_height(feat, score, compute_ranks(pts, grid))
    return float(np.max(np.abs(out.sum(axis=(1, 2, 3)) - feat.sum(axis=(0, 2, 3)))))


def check_slice(rng) -> float:
    shape = tuple(int(s) for s in rng.integers(1, 6, size=5))
    f = rng.standard_normal(shape)
    s = slice_heightwise(f)
    bad = not np.array_equal(s, naive_slice(f))
    bad |= not np.array_equal(unslice_heightwise(s, shape[3], shape[4]), f)
    bad |= not np.array_equal(slice_heightwise(unslice_heightwise(s, shape[3], shape[4])), s)
    return float(bad)


CIRCULAR_LENGTHS = (1, 2, 3, 8, 16, 200)


def check_circular(rng, lengths=CIRCULAR_LENGTHS) -> float:
    worst = 0.0
    for L, direction in ((L, d) for L in lengths for d in ("h", "v")):
        axis = 2 if direction == "h" else 3
        other = int(rng.integers(1, 5 if L < 100 else 2))
        shape = (2, 3, L, other) if axis == 2 else (2, 3, other, L)
        x = rng.standard_normal(shape)
        kern = rng.standard_normal((2, 3, L))
        p = DAParams.init(L, 4, direction, rng)
        pos = rng.standard_normal(L)
        p.pos = pos.reshape(p.pos.shape)
        got = da_forward(x, p, kernel=kern)
        worst = max(worst, float(np.max(np.abs(got - naive_circular_da(x, kern, pos, axis)))))
    return worst


def check_height_map(rng) -> float:
    rig = random_rig(rng, (12, 16))
    cloud = random_cloud(rng)
    d_ref, z_ref, v_ref = naive_nearest_returns(rig, cloud)
    hm = build_height_map(rig, cloud)
    dm = build_depth_map(rig, cloud)
    # heights are copied point coordinates, so they must match bit-exactly; depths are
    # recomputed with a different summation order and may differ in the last ulp
    exact = (np.array_equal(hm.valid, v_ref) and np.array_equal(dm.valid, v_ref)
             and np.array_equal(hm.values, np.where(v_ref, z_ref, 0.0)))
    if not exact:
        return np.inf
    return float(np.max(np.abs(dm.values - d_ref), initial=0.0))


def check_miou(rng) -> float:
    n = int(rng.integers(2, 5))
    shape = tuple(int(s) for s in rng.integers(1, 6, size=3))
    grid = GridSpec((0.0, 0.0, 0.0, float(shape[2]), float(shape[1]), float(shape[0])), shape[::-1])
    pred = rng.integers(0, n, size=shape)
    gt = rng.integers(0, n, size=shape)
    mask = rng.random(shape) < 0.7
    g = OccupancyGrid(gt, grid, mask, n)
    p = OccupancyGrid(pred, grid, None, n)
    bad = not np.array_equal(confusion_matrix(pred, gt, n, mask), naive_confusion(pred, gt, n, mask))
    rep = miou(p, g, use_mask=True, num_classes=n)
    ref = naive_miou(pred, gt, n, mask)
    bad |= not (rep.miou == ref or (np.isnan(rep.miou) and np.isnan(ref)))
    full = miou(p, OccupancyGrid(gt, grid, np.ones(shape, bool), n), True, n)
    none = miou(p, OccupancyGrid(gt, grid, None, n), False, n)
    bad |= not np.array_equal(full.iou, none.iou, equal_nan=True)
    bad |= not (full.miou == none.miou or (np.isnan(full.miou) and np.isnan(none.miou)))
    return float(bad)


def check_voxelize(rng) -> float:
    grid = GridSpec((-2.0, -2.0, -1.0, 2.0, 2.0, 1.0), (10, 10, 5))
    boxes = []
    for _ in range(int(rng.integers(0, 5))):
        a = rng.uniform(grid.lower, grid.upper)
        b = rng.uniform(grid.lower, grid.upper)
        if rng.random() < 0.5:  # lattice-aligned faces
            a = grid.lower + np.round((a - grid.lower) / grid.voxel_size) * grid.voxel_size
            b = grid.lower + np.round((b - grid.lower) / grid.voxel_size) * grid.voxel_size
        boxes.append(Box(tuple(np.minimum(a, b)), tuple(np.maximum(a, b)), int(rng.integers(1, 6))))
    return float(not np.array_equal(voxelize(boxes, grid), naive_voxelize(boxes, grid)))


def check_mlp(rng) -> float:
    dims = [int(d) for d in rng.integers(1, 6, size=3)]
    layers = [(rng.standard_normal((dims[i], dims[i + 1])), rng.standard_normal(dims[i + 1])) for i in range(2)]
    x = rng.standard_normal((4, dims[0]))
    return float(np.max(np.abs(mlp_forward(x, layers) - naive_mlp(x, layers))))


def check_conv1d(rng) -> float:
    x = rng.standard_normal((2, 3, 9))
    k = rng.standard_normal((2, 3, int(rng.integers(1, 10))))
    return float(np.max(np.abs(conv1d_depthwise(x, k) - naive_conv1d(x, k))))


def check_avgpool(rng) -> float:
    x = rng.standard_normal((2, 4, 8, 8))
    axis = int(rng.integers(0, 4))
    return float(np.max(np.abs(avgpool_axis(x, axis) - naive_mean(x, axis))))


def check_conv2d(rng) -> float:
    k = int(rng.choice([1, 3]))
    stride = int(rng.integers(1, 3))
    x = rng.standard_normal((2, 3, 7, 6))
    w = rng.standard_normal((4, 3, k, k))
    b = rng.standard_normal(4)
    pad = k // 2
    return float(np.max(np.abs(conv2d(x, w, b, stride, pad) - naive_conv2d(x, w, b, stride, pad))))


def check_bilinear(rng) -> float:
    x = rng.standard_normal((2, 3, int(rng.integers(1, 7)), int(rng.integers(1, 7))))
    out_hw = (int(rng.integers(1, 9)), int(rng.integers(1, 9)))
    return float(np.max(np.abs(bilinear_resize(x, out_hw) - naive_bilinear(x, out_hw))))


SUITE = (
    ("splat_vs_scatter", 50, 1e-12, check_splat),
    ("mass_conservation", 20, 1e-9, check_mass),
    ("slice_bijection", 100, 0.0, check_slice),
    ("circular_conv", 5, 1e-12, check_circular),
    ("height_map_min_depth", 20, 1e-12, check_height_map),
    ("miou_confusion", 50, 0.0, check_miou),
    ("voxelize_point_in_box", 20, 0.0, check_voxelize),
    ("conv1d_depthwise", 20, 1e-12, check_conv1d),
    ("avgpool", 10, 1e-12, check_avgpool),
    ("mlp", 20, 1e-12, check_mlp),
    ("conv2d", 10, 1e-12, check_conv2d),
    ("bilinear", 20, 1e-12, check_bilinear),
)


def run_oracle_suite(seed: int = 0, names=None) -> list[OracleResult]:
    """Run every oracle comparison (or those in ``names``) with a seeded generator."""
    results = []
    for name, cases, tol, fn in SUITE:
        if names and name not in names:
            continue
        results.append(_run(name, cases, tol, fn, np.random.default_rng([seed, len(results)])))
    return results
