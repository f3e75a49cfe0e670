import io
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from daocc.bench import bench_latency
from daocc.flops import conv_macs, count_flops, da_macs
from daocc.gradsuite import mini_config
from daocc.grid import GridSpec
from daocc.metrics import EvalReport, OccupancyGrid, miou, read_voxels, write_voxels
from daocc.model import ModelConfig
from daocc.oracles import naive_miou
from daocc.tensor import DimensionError

G = GridSpec((0, 0, 0, 4, 4, 4), (4, 4, 4))


def _grid(labels, mask=None, n=4):
    return OccupancyGrid(np.asarray(labels, dtype=np.uint8), G, mask, n)


def test_identical_grids_score_one():
    lab = np.random.default_rng(0).integers(0, 4, G.shape_zyx)
    rep = miou(_grid(lab), _grid(lab))
    assert rep.miou == 1.0 and all(v == 1.0 for v in rep.iou[1:] if not np.isnan(v))


def test_disjoint_single_class_iou_zero():
    a, b = np.zeros(G.shape_zyx, int), np.zeros(G.shape_zyx, int)
    a[0, 0, 0], b[1, 1, 1] = 1, 1
    rep = miou(_grid(a), _grid(b))
    assert rep.iou[1] == 0.0 and rep.miou == 0.0


def test_absent_classes_excluded_and_empty_skipped():
    a = np.zeros(G.shape_zyx, int)
    a[0, 0, 0] = 2
    rep = miou(_grid(a), _grid(a), num_classes=4)
    assert np.isnan(rep.iou[0]) and np.isnan(rep.iou[1]) and np.isnan(rep.iou[3]) and rep.miou == 1.0
    assert np.isnan(miou(_grid(a), _grid(a), exclude=(2,)).miou)


def test_shape_mismatch_is_an_error():
    other = OccupancyGrid(np.zeros((2, 2, 2), np.uint8), GridSpec((0, 0, 0, 1, 1, 1), (2, 2, 2)))
    with pytest.raises(DimensionError):
        miou(_grid(np.zeros(G.shape_zyx, int)), other)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_matches_confusion_oracle_and_all_true_mask(seed):
    rng = np.random.default_rng(seed)
    p, g = rng.integers(0, 3, G.shape_zyx), rng.integers(0, 3, G.shape_zyx)
    mask = rng.random(G.shape_zyx) > 0.4
    rep = miou(_grid(p), _grid(g, mask), num_classes=3)
    ref = naive_miou(p, g, 3, mask)
    assert rep.miou == ref or (np.isnan(rep.miou) and np.isnan(ref))
    full = miou(_grid(p), _grid(g, np.ones(G.shape_zyx, bool)), num_classes=3)
    assert full.miou == miou(_grid(p), _grid(g), num_classes=3).miou


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_relabeling_permutes_iou(seed):
    rng = np.random.default_rng(seed)
    p, g = rng.integers(0, 4, G.shape_zyx), rng.integers(0, 4, G.shape_zyx)
    perm = np.concatenate([[0], 1 + rng.permutation(3)])  # keep the empty class in place
    a = miou(_grid(p), _grid(g), num_classes=4)
    b = miou(_grid(perm[p]), _grid(perm[g]), num_classes=4)
    np.testing.assert_array_equal(b.iou[perm], a.iou)
    assert b.miou == pytest.approx(a.miou, rel=1e-15)


def test_eval_report_text_round_trip():
    rep = EvalReport(np.array([np.nan, 0.5, 0.25]), 0.375, {"voxels": 64}, "unmasked")
    back = EvalReport.from_text(rep.to_text())
    assert back.miou == rep.miou and back.counts == rep.counts and back.mask_mode == "unmasked"
    np.testing.assert_array_equal(back.iou, rep.iou)


@pytest.mark.parametrize("with_mask", [False, True])
def test_daov_round_trip(with_mask):
    rng = np.random.default_rng(1)
    mask = rng.random(G.shape_zyx) > 0.5 if with_mask else None
    occ = _grid(rng.integers(0, 4, G.shape_zyx), mask)
    buf = io.BytesIO()
    write_voxels(buf, occ)
    raw = buf.getvalue()
    assert raw[:4] == b"DAOV" and len(raw) == 4 + 48 + 12 + 64 + 1 + (8 if with_mask else 0)
    back = read_voxels(io.BytesIO(raw))
    assert back.grid == occ.grid and np.array_equal(back.labels, occ.labels)
    assert (back.mask is None) if not with_mask else np.array_equal(back.mask, mask)
    with pytest.raises(ValueError):
        read_voxels(io.BytesIO(b"XXXX" + raw[4:]))


def test_occupancy_grid_validation():
    with pytest.raises(ValueError):
        _grid(np.full(G.shape_zyx, 4))
    with pytest.raises(DimensionError):
        _grid(np.zeros(G.shape_zyx, int), np.ones((2, 2, 2), bool))


# -- FLOPs --------------------------------------------------------------------------------------

def test_doubling_channels_quadruples_conv():
    assert conv_macs(1, 8, 8, 10, 10, 3) == 4 * conv_macs(1, 4, 4, 10, 10, 3)


def test_da_correlation_linear_in_length():
    # kernel-generation MLP aside, the correlation grows linearly in the attended length per output element
    corr = [da_macs(1, 4, L, 32, 8) - da_macs(1, 4, L, 0, 8) for L in (4, 8, 16)]
    per_output = [c // (4 * L * 32) for c, L in zip(corr, (4, 8, 16))]
    assert per_output == [4, 8, 16]


def test_flops_pure_and_height_only_difference():
    base = ModelConfig()
    a, b = count_flops(base), count_flops(base)
    assert a.macs == b.macs and a.total_flops == 2 * a.total_macs
    z8 = count_flops(replace(base, height_counts=(32, 32, 8)))
    changed = {k for k in a.macs if a.macs[k] != z8.macs[k]}
    assert changed <= {"heightnet", "splat_height", "dha", "fuse"}
    assert z8.total_macs < a.total_macs
    assert "total =" in a.to_text()


def test_ablation_flags_drop_module_counts():
    r = count_flops(replace(ModelConfig(), use_dha=False, use_dba=False))
    assert r.macs["dha"] == 0 and r.macs["dba"] == 0


# -- latency --------------------------------------------------------------------------------------

def test_single_iteration_median_is_the_sample():
    stats = bench_latency(mini_config(), iterations=1, warmup=1)
    assert len(stats.samples) == 1 and stats.median == stats.samples[0] == stats.p95
    assert "median_s" in stats.to_text() and "env.numpy" in stats.to_text()


def test_iterations_must_be_positive():
    with pytest.raises(ValueError):
        bench_latency(mini_config(), iterations=0)
