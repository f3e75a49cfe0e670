import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from daocc.geometry import CameraRig
from daocc.grid import BinSpec, GridSpec
from daocc.oracles import naive_slice, naive_splat, random_splat_case
from daocc.view_transform import (compute_ranks, make_frustum, make_frustums, slice_heightwise, splat_bev,
                                  splat_height, unslice_heightwise)
from daocc.tensor import DimensionError

OCC3D = GridSpec.occ3d()


def test_identity_frustum_single_point():
    pts = make_frustum(CameraRig.identity((1, 1)), (1, 1), BinSpec(1, 0.5, 1.5))
    assert pts.shape == (1, 1, 1, 3)
    np.testing.assert_allclose(pts[0, 0, 0], [0.0, 0.0, 1.0], atol=1e-15)


def test_frustum_point_count():
    rigs = [CameraRig.looking(a, (0, 0, 1), (16, 32)) for a in (0.0, 1.0)]
    pts = make_frustums(rigs, (4, 8), BinSpec(5, 1.0, 6.0))
    assert pts.shape == (2, 5, 4, 8, 3)


def test_height_mode_hits_plane():
    rig = CameraRig.looking(0.3, (0.0, 0.0, 1.5), (16, 16), pitch=1.0)  # every ray points downward
    pts = make_frustum(rig, (4, 4), BinSpec(1, 0.0, 0.4), mode="height")
    assert np.isfinite(pts).all()
    np.testing.assert_allclose(pts[..., 2], 0.2, atol=1e-9)


def test_height_mode_rays_that_never_reach_a_plane_are_out_of_grid():
    # level camera, principal row v=2: rows 0-1 point up, row 2 is parallel to the plane, row 3 points down
    rig = CameraRig.looking(0.0, (0.0, 0.0, 1.0), (4, 4))
    pts = make_frustum(rig, (4, 4), BinSpec(1, -1.0, 0.0), mode="height")
    assert np.isnan(pts[0, :3]).all() and np.isfinite(pts[0, 3]).all()
    np.testing.assert_allclose(pts[0, 3, :, 2], -0.5, atol=1e-12)
    idx = compute_ranks(pts[None], GridSpec((-9, -9, -9, 9, 9, 9), (2, 2, 2)))
    assert (idx.ranks[:12] == -1).all() and (idx.ranks[12:] >= 0).all()


def test_frustum_stride_must_divide():
    with pytest.raises(DimensionError):
        make_frustum(CameraRig.identity((10, 10)), (3, 3), BinSpec(1, 0.5, 1.5))


def test_compute_ranks_examples():
    idx = compute_ranks(np.array([[-40.0, -40.0, -1.0], [0.0, 0.0, 0.0], [41.0, 0.0, 0.0], [40.0, 0.0, 0.0]]), OCC3D)
    X, Y, _ = OCC3D.counts
    assert idx.ranks[0] == 0
    assert idx.ranks[1] == (2 * Y + 100) * X + 100
    assert idx.ranks[2] == -1 and idx.ranks[3] == -1  # upper bound is exclusive
    gi, ok = OCC3D.voxel_indices(np.array([[0.0, 0.0, 0.0]]))
    assert ok[0] and tuple(gi[0]) == (100, 100, 2)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_rank_segments_partition_sorted_points(seed):
    rng = np.random.default_rng(seed)
    _, _, pts, grid = random_splat_case(rng)
    idx = compute_ranks(pts, grid)
    assert (idx.ranks < grid.num_voxels).all()
    assert len(idx.order) == int((idx.ranks >= 0).sum())
    sr = idx.ranks[idx.order]
    assert (np.diff(sr) >= 0).all()
    bounds = list(idx.seg_starts) + [len(sr)]
    for a, b, r in zip(bounds[:-1], bounds[1:], idx.seg_ranks):
        assert (sr[a:b] == r).all()
    # idempotent: recomputing gives the same index
    again = compute_ranks(pts, grid)
    assert np.array_equal(again.order, idx.order) and np.array_equal(again.seg_ranks, idx.seg_ranks)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_ranks_independent_of_point_order(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(-5, 5, size=(200, 3))
    grid = GridSpec((-4, -4, -4, 4, 4, 4), (4, 5, 3))
    perm = rng.permutation(200)
    a, b = compute_ranks(p, grid), compute_ranks(p[perm], grid)
    assert np.array_equal(a.ranks[perm], b.ranks)
    assert np.array_equal(np.sort(a.ranks[a.order]), b.ranks[b.order])


def test_splat_bev_one_pixel_example():
    grid = GridSpec((0, 0, 0, 2, 1, 1), (2, 1, 1))
    pts = np.array([[0.5, 0.5, 0.5], [1.5, 0.5, 0.5]]).reshape(1, 2, 1, 1, 3)
    out = splat_bev(np.full((1, 1, 1, 1), 4.0), np.full((1, 2, 1, 1), 0.5), compute_ranks(pts, grid))
    assert out.tolist() == [[[2.0, 2.0]]]


def test_splat_all_out_of_grid():
    grid = GridSpec((0, 0, 0, 1, 1, 1), (2, 2, 1))
    pts = np.full((1, 3, 2, 2, 3), 5.0)
    out = splat_bev(np.ones((1, 4, 2, 2)), np.ones((1, 3, 2, 2)), compute_ranks(pts, grid))
    assert out.shape == (4, 2, 2) and not out.any()


def test_splat_matches_scatter_oracle_random_4x4():
    rng = np.random.default_rng(11)
    grid = GridSpec((-2, -2, -1, 2, 2, 1), (6, 6, 1))
    pts = rng.uniform(-2.5, 2.5, size=(1, 3, 4, 4, 3))
    feat, score = rng.standard_normal((1, 5, 4, 4)), rng.random((1, 3, 4, 4))
    ref = naive_splat(feat, score, pts, grid)[:, 0]
    assert np.max(np.abs(splat_bev(feat, score, compute_ranks(pts, grid)) - ref)) <= 1e-12


def test_splat_uniform_height_scores():
    grid = GridSpec((-1, -1, -1, 1, 1, 1), (1, 1, 16))
    # one pixel whose 16 points land in 16 distinct z layers
    z = -1 + (np.arange(16) + 0.5) / 8
    pts = np.stack([np.zeros(16), np.zeros(16), z], axis=-1).reshape(1, 16, 1, 1, 3)
    score = np.full((1, 16, 1, 1), 1.0 / 16)
    out = splat_height(np.array([[[[3.0]]]]), score, compute_ranks(pts, grid))
    np.testing.assert_allclose(out[0, :, 0, 0], 3.0 / 16, rtol=0, atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**16), a=st.floats(-10, 10))
def test_splat_linear_in_features(seed, a):
    rng = np.random.default_rng(seed)
    f, s, pts, grid = random_splat_case(rng)
    g = rng.standard_normal(f.shape)
    idx = compute_ranks(pts, grid)
    lhs = splat_height(a * f + g, s, idx)
    rhs = a * splat_height(f, s, idx) + splat_height(g, s, idx)
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12 * max(1.0, abs(a)) * 10)


def test_mass_conservation_in_grid():
    rng = np.random.default_rng(12)
    grid = GridSpec((-2, -2, -2, 2, 2, 2), (4, 4, 4))
    pts = rng.uniform(-1.99, 1.99, size=(2, 6, 3, 3, 3))
    feat = rng.standard_normal((2, 4, 3, 3))
    lg = rng.standard_normal((2, 6, 3, 3))
    score = np.exp(lg) / np.exp(lg).sum(axis=1, keepdims=True)
    out = splat_height(feat, score, compute_ranks(pts, grid))
    np.testing.assert_allclose(out.sum(axis=(1, 2, 3)), feat.sum(axis=(0, 2, 3)), atol=1e-9)


def test_splat_rejects_foreign_index():
    grid = GridSpec((0, 0, 0, 1, 1, 1), (2, 2, 1))
    idx = compute_ranks(np.zeros((1, 2, 2, 2, 3)), grid)
    with pytest.raises(DimensionError):
        splat_bev(np.ones((1, 1, 2, 2)), np.ones((1, 3, 2, 2)), idx)
    with pytest.raises(DimensionError):
        splat_bev(np.ones((1, 1, 2, 2)), np.ones((1, 2, 2, 2)), compute_ranks(np.zeros((1, 2, 2, 2, 3)),
                                                                             GridSpec((0, 0, 0, 1, 1, 1), (2, 2, 2))))


def test_slice_example_and_shapes():
    f = np.zeros((1, 1, 1, 2, 2))
    for y in range(2):
        for x in range(2):
            f[0, 0, 0, y, x] = 2 * y + x
    assert slice_heightwise(f)[0, 0, 0].tolist() == [0.0, 1.0, 2.0, 3.0]
    assert unslice_heightwise(slice_heightwise(f), 2, 2).tolist() == f.tolist()
    big = np.random.default_rng(0).standard_normal((1, 8, 16, 32, 32))
    s = slice_heightwise(big)
    assert s.shape == (1, 8, 16, 1024)
    assert np.array_equal(s, naive_slice(big))
    with pytest.raises(DimensionError):
        unslice_heightwise(s, 16, 32)


@settings(max_examples=50)
@given(shape=st.tuples(*[st.integers(1, 5)] * 5), seed=st.integers(0, 2**16))
def test_slice_unslice_bijection(shape, seed):
    f = np.random.default_rng(seed).standard_normal(shape)
    s = slice_heightwise(f)
    assert np.array_equal(unslice_heightwise(s, shape[3], shape[4]), f)
    assert np.array_equal(slice_heightwise(unslice_heightwise(s, shape[3], shape[4])), s)
