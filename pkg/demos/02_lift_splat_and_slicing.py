"""Lift image features along camera rays and splat them into BEV and 3D grids.

Shows the depth-mode and height-mode frustums, checks the segment-sum splat
against a per-point scatter, confirms mass conservation and slices the 3D
grid into Z rows of length Y*X.

Run: python demos/02_lift_splat_and_slicing.py
"""
import numpy as np

from daocc.model import ModelConfig
from daocc.oracles import naive_splat
from daocc.ops import softmax
from daocc.scenegen import SceneSpec
from daocc.view_transform import (compute_ranks, make_frustums, slice_heightwise, splat_bev, splat_height,
                                  unslice_heightwise)

cfg = ModelConfig()
rigs = SceneSpec().rigs()
H, W = cfg.feat_size
rng = np.random.default_rng(0)

dpts = make_frustums(rigs, cfg.feat_size, cfg.depth_binspec, "depth")
hpts = make_frustums(rigs, cfg.feat_size, cfg.height_binspec, "height")
bev_idx = compute_ranks(dpts, cfg.bev_grid)
h_idx = compute_ranks(hpts, cfg.height_grid)
print(f"depth frustum {dpts.shape}: {bev_idx.num_in_grid}/{bev_idx.num_points} points land in the BEV grid, "
      f"{len(bev_idx.seg_ranks)} distinct cells")
print(f"height frustum {hpts.shape}: {h_idx.num_in_grid}/{h_idx.num_points} points land in the 3D grid "
      f"(rays that never reach a height plane are dropped)")

feat = rng.standard_normal((len(rigs), cfg.channels, H, W))
dscore = softmax(rng.standard_normal((len(rigs), cfg.depth_binspec.count, H, W)), axis=1)
hscore = softmax(rng.standard_normal((len(rigs), cfg.height_binspec.count, H, W)), axis=1)

f_bev = splat_bev(feat, dscore, bev_idx)
ref = naive_splat(feat, dscore, dpts, cfg.bev_grid)[:, 0]
print(f"\nBEV splat {f_bev.shape}; max |segment-sum - scatter| = {np.max(np.abs(f_bev - ref)):.1e}")

f_3d = splat_height(feat, hscore, h_idx)
inside = np.zeros(h_idx.num_points, bool)
inside[h_idx.order] = True
print(f"3D splat {f_3d.shape}; {inside.mean():.0%} of height samples are inside the grid")

# Mass conservation: with every point inside the grid, the splat only redistributes feature mass.
cube = cfg.height_grid
pts = rng.uniform(cube.lower + 1e-6, cube.upper - 1e-6, size=hpts.shape)
full = splat_height(feat, hscore, compute_ranks(pts, cube))
print(f"in-grid mass check: max |sum F_3D - sum F| per channel = "
      f"{np.max(np.abs(full.sum(axis=(1, 2, 3)) - feat.sum(axis=(0, 2, 3)))):.1e}")

sliced = slice_heightwise(f_3d[None])
print(f"\nslice (1, C, Z, Y, X) {f_3d[None].shape} -> {sliced.shape}; "
      f"unslice restores it bit-exactly: {np.array_equal(unslice_heightwise(sliced, *f_3d.shape[2:]), f_3d[None])}")
