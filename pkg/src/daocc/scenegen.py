"""Synthetic street scenes with analytic ground truth.

Objects are axis-aligned boxes snapped to the voxel lattice, so voxel labels
are exact and every LiDAR return on an object lies on the surface of an
occupied voxel.  The ground plane is the grid floor and is not a voxel class.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

from .geometry import CameraRig, PointCloud
from .grid import GridSpec
from .metrics import OccupancyGrid, read_voxels, write_voxels

CLASS_NAMES = ("empty", "wall", "pole", "vehicle", "sign", "pedestrian")
EMPTY, WALL, POLE, VEHICLE, SIGN, PEDESTRIAN = range(6)
NUM_CLASSES = len(CLASS_NAMES)

PALETTE = np.array([
    [0.0, 0.0, 0.0],
    [0.9, 0.35, 0.2],
    [0.2, 0.9, 0.3],
    [0.25, 0.35, 0.95],
    [0.95, 0.9, 0.15],
    [0.9, 0.2, 0.9],
])
GROUND_COLOR = np.array([0.45, 0.45, 0.45])
SKY, GROUND = -1, -2


class SceneSpecError(ValueError):
    pass


def toy_grid() -> GridSpec:
    return GridSpec((-6.4, -6.4, -1.0, 6.4, 6.4, 5.4), (32, 32, 16))


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    class_id: int


@dataclass
class SceneSpec:
    seed: int = 0
    grid: GridSpec = field(default_factory=toy_grid)
    ground_height: float | None = None  # defaults to the grid floor
    objects: list[Box] = field(default_factory=list)
    num_cameras: int = 4
    image_size: tuple[int, int] = (64, 128)
    camera_height: float = 0.5
    hfov_deg: float = 90.0
    lidar_height: float = 0.8
    lidar_azimuths: int = 720
    lidar_elevations: int = 32
    lidar_elevation_range: tuple[float, float] = (-30.0, 15.0)
    lidar_max_range: float = 30.0
    fog: float = 12.0

    def __post_init__(self):
        if self.ground_height is None:
            self.ground_height = self.grid.bounds[2]
        lo, hi = self.grid.lower, self.grid.upper
        for box in self.objects:
            if np.any(np.array(box.lo) < lo - 1e-9) or np.any(np.array(box.hi) > hi + 1e-9):
                raise SceneSpecError(f"object {box} leaves the perception bounds")
            if not np.all(np.array(box.hi) > np.array(box.lo)):
                raise SceneSpecError(f"object {box} has non-positive extent")
            if not 0 < box.class_id < NUM_CLASSES:
                raise SceneSpecError(f"object class {box.class_id} out of range")

    def rigs(self) -> list[CameraRig]:
        pos = (0.0, 0.0, self.camera_height)
        return [CameraRig.looking(2 * np.pi * i / self.num_cameras, pos, self.image_size, self.hfov_deg)
                for i in range(self.num_cameras)]


@dataclass
class Scene:
    spec: SceneSpec
    rigs: list[CameraRig]
    images: np.ndarray  # (N, 3, H, W)
    cloud: PointCloud
    occupancy: OccupancyGrid


# -- random layouts ---------------------------------------------------------------

def random_scene_spec(seed: int, grid: GridSpec | None = None, clear_radius: float = 2.0, **kwargs) -> SceneSpec:
    """Tall-structure layout: walls, poles (some carrying signs), vehicles, pedestrians."""
    grid = grid or toy_grid()
    rng = np.random.default_rng(seed)
    X, Y, Z = grid.counts
    size = grid.voxel_size
    taken = np.zeros((Y, X), dtype=bool)
    xs = grid.centers(0)
    ys = grid.centers(1)
    clear = (np.abs(xs)[None, :] < clear_radius) & (np.abs(ys)[:, None] < clear_radius)
    taken |= clear
    objects: list[Box] = []

    def vox(n, axis):
        return max(1, int(round(n / size[axis])))

    def place(fx, fy, tries=40):
        for _ in range(tries):
            x0 = int(rng.integers(0, X - fx + 1))
            y0 = int(rng.integers(0, Y - fy + 1))
            if not taken[y0:y0 + fy, x0:x0 + fx].any():
                taken[max(0, y0 - 1):y0 + fy + 1, max(0, x0 - 1):x0 + fx + 1] = True
                return x0, y0
        return None

    def add(x0, y0, z0, fx, fy, fz, cls):
        lo = grid.lower + np.array([x0, y0, z0]) * size
        hi = grid.lower + np.array([x0 + fx, y0 + fy, min(z0 + fz, Z)]) * size
        objects.append(Box(tuple(lo), tuple(hi), cls))

    for _ in range(rng.integers(1, 3)):
        length, height = vox(rng.uniform(2.4, 6.4), 0), vox(rng.uniform(1.6, 3.6), 2)
        fx, fy = (length, 1) if rng.random() < 0.5 else (1, length)
        at = place(fx, fy)
        if at:
            add(*at, 0, fx, fy, height, WALL)
    for _ in range(rng.integers(2, 6)):
        at = place(1, 1)
        if not at:
            continue
        height = vox(rng.uniform(2.4, 4.8), 2)
        add(*at, 0, 1, 1, height, POLE)
        if rng.random() < 0.6:
            sx, sy = (3, 1) if rng.random() < 0.5 else (1, 3)
            x0 = min(max(at[0] - (sx - 1) // 2, 0), X - sx)
            y0 = min(max(at[1] - (sy - 1) // 2, 0), Y - sy)
            add(x0, y0, max(height - 2, 0), sx, sy, 2, SIGN)
    for _ in range(rng.integers(1, 4)):
        w, l, h = vox(rng.uniform(1.6, 2.0), 0), vox(rng.uniform(3.6, 4.4), 0), vox(rng.uniform(1.2, 1.6), 2)
        fx, fy = (l, w) if rng.random() < 0.5 else (w, l)
        at = place(fx, fy)
        if at:
            add(*at, 0, fx, fy, h, VEHICLE)
    for _ in range(rng.integers(1, 4)):
        at = place(1, 1)
        if at:
            add(*at, 0, 1, 1, vox(rng.uniform(1.6, 2.0), 2), PEDESTRIAN)
    return SceneSpec(seed=seed, grid=grid, objects=objects, **kwargs)


# -- ray casting -----------------------------------------------------------------------

def _box_arrays(objects):
    if not objects:
        return np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    lo = np.array([b.lo for b in objects])
    hi = np.array([b.hi for b in objects])
    cls = np.array([b.class_id for b in objects])
    return lo, hi, cls


def cast_rays(origins, dirs, objects, ground_height, max_t=np.inf):
    """First hit along each ray: ``(t, hit)`` with ``hit`` a box index, GROUND or SKY."""
    origins = np.broadcast_to(np.asarray(origins, dtype=np.float64), np.shape(dirs))
    dirs = np.asarray(dirs, dtype=np.float64)
    d = np.where(np.abs(dirs) < 1e-30, 1e-30, dirs)
    t_best = np.full(len(dirs), np.inf)
    hit = np.full(len(dirs), SKY, dtype=np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        tg = (ground_height - origins[:, 2]) / d[:, 2]
    ground = (tg > 1e-9) & (dirs[:, 2] < 0)
    t_best[ground] = tg[ground]
    hit[ground] = GROUND
    lo, hi, _ = _box_arrays(objects)
    for m in range(len(lo)):
        t1 = (lo[m] - origins) / d
        t2 = (hi[m] - origins) / d
        tmin = np.minimum(t1, t2).max(axis=1)
        tmax = np.maximum(t1, t2).min(axis=1)
        ok = (tmax >= tmin) & (tmin > 1e-9) & (tmin < t_best)
        t_best[ok] = tmin[ok]
        hit[ok] = m
    far = t_best > max_t
    t_best[far] = np.inf
    hit[far] = SKY
    return t_best, hit


def render_images(spec: SceneSpec, rigs) -> np.ndarray:
    H, W = spec.image_size
    v, u = np.meshgrid(np.arange(H) + 0.5, np.arange(W) + 0.5, indexing="ij")
    _, _, cls = _box_arrays(spec.objects)
    images = np.zeros((len(rigs), 3, H, W))
    for n, rig in enumerate(rigs):
        rays = rig.pixel_rays(u, v).reshape(-1, 3)  # camera depth 1 per unit t
        t, hit = cast_rays(rig.center, rays, spec.objects, spec.ground_height)
        color = np.zeros((len(t), 3))
        color[hit == GROUND] = GROUND_COLOR
        on_box = hit >= 0
        color[on_box] = PALETTE[cls[hit[on_box]]]
        fade = np.where(np.isfinite(t), np.exp(-np.where(np.isfinite(t), t, 0.0) / spec.fog), 0.0)
        images[n] = (color * fade[:, None]).T.reshape(3, H, W)
    return images


def lidar_scan(spec: SceneSpec) -> PointCloud:
    az = np.linspace(0.0, 2 * np.pi, spec.lidar_azimuths, endpoint=False)
    el = np.deg2rad(np.linspace(*spec.lidar_elevation_range, spec.lidar_elevations))
    A, E = np.meshgrid(az, el, indexing="ij")
    dirs = np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1).reshape(-1, 3)
    origin = np.array([0.0, 0.0, spec.lidar_height])
    t, hit = cast_rays(origin, dirs, spec.objects, spec.ground_height, spec.lidar_max_range)
    keep = hit != SKY
    T = np.eye(4)
    T[:3, 3] = origin
    return PointCloud(dirs[keep] * t[keep, None], T)


def voxelize(objects, grid: GridSpec) -> np.ndarray:
    """Label each voxel with the last object containing its center (half-open boxes)."""
    labels = np.zeros(grid.shape_zyx, dtype=np.uint8)
    cx, cy, cz = grid.centers(0), grid.centers(1), grid.centers(2)
    for b in objects:
        x0, x1 = np.searchsorted(cx, [b.lo[0], b.hi[0]], side="left")
        y0, y1 = np.searchsorted(cy, [b.lo[1], b.hi[1]], side="left")
        z0, z1 = np.searchsorted(cz, [b.lo[2], b.hi[2]], side="left")
        labels[z0:z1, y0:y1, x0:x1] = b.class_id
    return labels


def visibility_mask(spec: SceneSpec, rigs, grid: GridSpec, stride: int = 2, step: float = 0.1,
                    max_dist: float = 20.0) -> np.ndarray:
    """Voxels crossed by camera rays up to (and including) their first hit."""
    H, W = spec.image_size
    v, u = np.meshgrid(np.arange(0, H, stride) + 0.5, np.arange(0, W, stride) + 0.5, indexing="ij")
    mask = np.zeros(grid.num_voxels, dtype=bool)
    X, Y, _ = grid.counts
    ts = np.arange(step / 2, max_dist, step)
    for rig in rigs:
        rays = rig.pixel_rays(u, v).reshape(-1, 3)
        rays = rays / np.linalg.norm(rays, axis=1, keepdims=True)
        t, _ = cast_rays(rig.center, rays, spec.objects, spec.ground_height)
        stop = np.minimum(t + step, max_dist)
        pts = rig.center + ts[None, :, None] * rays[:, None, :]
        live = ts[None, :] <= stop[:, None]
        idx, ok = grid.voxel_indices(pts[live])
        r = (idx[ok, 2] * Y + idx[ok, 1]) * X + idx[ok, 0]
        mask[r] = True
    return mask.reshape(grid.shape_zyx)


def generate_scene(spec: SceneSpec, with_mask: bool = True) -> Scene:
    """Images, LiDAR cloud and labelled occupancy for ``spec`` (a pure function of it)."""
    rigs = spec.rigs()
    images = render_images(spec, rigs)
    cloud = lidar_scan(spec)
    labels = voxelize(spec.objects, spec.grid)
    mask = visibility_mask(spec, rigs, spec.grid) if with_mask else None
    occ = OccupancyGrid(labels, spec.grid, mask, NUM_CLASSES)
    return Scene(spec, rigs, images, cloud, occ)


# -- scene files -------------------------------------------------------------------------

def _fmt(a) -> str:
    return " ".join(repr(float(x)) for x in np.ravel(a))


def write_scene(fp: BinaryIO, rigs, cloud: PointCloud, occ: OccupancyGrid) -> None:
    """Text header, binary point block (u64 count + f64 xyz), then a DAOV grid."""
    lines = ["DAOS 1", f"cameras {len(rigs)}"]
    for rig in rigs:
        lines.append(f"K {_fmt(rig.K)}")
        lines.append(f"R {_fmt(rig.R)}")
        lines.append(f"t {_fmt(rig.t)}")
        lines.append(f"size {rig.image_size[0]} {rig.image_size[1]}")
    lines.append(f"sensor_to_ego {_fmt(cloud.sensor_to_ego)}")
    lines.append("end")
    fp.write(("\n".join(lines) + "\n").encode("ascii"))
    fp.write(struct.pack("<Q", len(cloud.points)))
    fp.write(np.ascontiguousarray(cloud.points, dtype="<f8").tobytes())
    write_voxels(fp, occ)


def read_scene(fp: BinaryIO):
    def line():
        return fp.readline().decode("ascii").strip()

    if line() != "DAOS 1":
        raise ValueError("not a scene file")
    n = int(line().split()[1])
    rigs = []
    for _ in range(n):
        K = np.array(line().split()[1:], dtype=float).reshape(3, 3)
        R = np.array(line().split()[1:], dtype=float).reshape(3, 3)
        t = np.array(line().split()[1:], dtype=float)
        size = tuple(int(s) for s in line().split()[1:])
        rigs.append(CameraRig(K, R, t, size))
    T = np.array(line().split()[1:], dtype=float).reshape(4, 4)
    if line() != "end":
        raise ValueError("malformed scene header")
    (count,) = struct.unpack("<Q", fp.read(8))
    pts = np.frombuffer(fp.read(24 * count), dtype="<f8").reshape(count, 3).astype(np.float64)
    return rigs, PointCloud(pts, T), read_voxels(fp)
