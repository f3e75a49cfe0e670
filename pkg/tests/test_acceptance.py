"""Acceptance criteria 1-10, one PASS/FAIL line each (printed in the terminal summary).

Criteria 8 and 9 share one ablation run (the DHA+DBA row is the Z=16 grid
row); it trains seven toy models for 2000 steps each and takes well under
an hour on one CPU core.
"""
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from daocc.ablation import AblationSettings, run_ablation
from daocc.attention import DAParams, da_forward
from daocc.bench import bench_latency
from daocc.cli import main
from daocc.gradsuite import E2E_TOLERANCE, EPSILON, OP_TOLERANCE, run_e2e_check, run_op_checks
from daocc.model import ModelConfig
from daocc.oracles import (CIRCULAR_LENGTHS, check_height_map, check_mass, check_miou, check_slice, check_splat,
                           naive_circular_da, naive_slice)
from daocc.view_transform import slice_heightwise, unslice_heightwise


def record(n, passed, text):
    ACCEPTANCE[n] = f"{'PASS' if passed else 'FAIL'} criterion {n:>2}: {text}"
    print(ACCEPTANCE[n])
    assert passed, ACCEPTANCE[n]


def _worst(check, cases, seed):
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = max(check(rng) for _ in range(cases))
    return worst, time.perf_counter() - t0


def test_1_splat_oracle_equivalence():
    worst, secs = _worst(check_splat, 50, 1)
    record(1, worst <= 1e-12 and secs < 30,
           f"splat vs scatter oracle, 50 instances: max |diff| {worst:.1e} (tol 1e-12), {secs:.1f}s (< 30s)")


def test_2_mass_conservation():
    worst, _ = _worst(check_mass, 50, 2)
    record(2, worst <= 1e-9, f"in-grid frustums, 50 instances: max per-channel mass error {worst:.1e} (tol 1e-9)")


def test_3_slicing_bijection():
    worst, _ = _worst(check_slice, 100, 3)
    f = np.random.default_rng(3).standard_normal((1, 8, 16, 32, 32))
    s = slice_heightwise(f)
    paper = (s.shape == (1, 8, 16, 1024) and np.array_equal(s, naive_slice(f))
             and unslice_heightwise(s, 32, 32).tobytes() == f.tobytes()
             and slice_heightwise(unslice_heightwise(s, 32, 32)).tobytes() == s.tobytes())
    record(3, worst == 0.0 and paper,
           f"100 random tensors bit-exact both ways (max diff {worst:g}); (1,8,16,32,32)->(1,8,16,1024) ok={paper}")


def test_4_circular_convolution():
    rng = np.random.default_rng(4)
    worst = 0.0
    for L in CIRCULAR_LENGTHS:
        for direction in ("h", "v"):
            p = DAParams.init(L, 4, direction, rng)
            shape = (2, 3, L, 5) if direction == "h" else (2, 3, 5, L)
            x, k = rng.standard_normal(shape), rng.standard_normal((2, 3, L))
            worst = max(worst, float(np.max(np.abs(da_forward(x, p, kernel=k) - naive_circular_da(x, k, p.pos, p.axis)))))
    record(4, worst <= 1e-12, f"L in {CIRCULAR_LENGTHS}, h and v: max |diff| {worst:.1e} (tol 1e-12)")


def test_5_gradient_suite():
    t0 = time.perf_counter()
    ops = run_op_checks(OP_TOLERANCE, EPSILON)
    e2e = run_e2e_check(E2E_TOLERANCE, EPSILON)
    secs = time.perf_counter() - t0
    worst_op = max(r.report.max_rel_error for r in ops)
    failed = [r.name for r in ops if not r.passed] + ([] if e2e.passed else ["end-to-end"])
    record(5, not failed and secs < 300,
           f"{len(ops)} ops max rel err {worst_op:.1e} (tol 1e-4), end-to-end {e2e.report.max_rel_error:.1e} "
           f"(tol 1e-3), {secs:.0f}s (< 300s){'; failed: ' + ', '.join(failed) if failed else ''}")


def test_6_height_ground_truth():
    worst, _ = _worst(check_height_map, 20, 6)
    record(6, worst <= 1e-12,
           f"20 random clouds vs naive min-depth scan: heights/valid exact, max depth diff {worst:.1e}")


def test_7_miou_oracle():
    worst, _ = _worst(check_miou, 50, 7)
    record(7, worst == 0.0, f"50 random grids vs confusion oracle (incl. all-true mask == unmasked): max diff {worst:g}")


# -- trained-model trends -----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def ablation():
    t0 = time.perf_counter()
    result = run_ablation(ModelConfig(), AblationSettings())
    return result, time.perf_counter() - t0


def test_8_ablation_trend(ablation):
    result, secs = ablation
    m = {r.name: 100 * r.miou for r in result.matrix}
    ok = result.matrix_ordering_holds(0.01) and secs < 3600
    record(8, ok, "mIoU DHA+DBA {DHA+DBA:.2f}, DHA only {DHA only:.2f}, DBA only {DBA only:.2f}, "
                  "neither {neither:.2f} (need full >= DHA >= neither, full >= DBA, full - neither >= 1); "
                  .format(**m) + f"ablation wall time {secs / 60:.1f} min")


def test_9_grid_resolution_trend(ablation):
    result, _ = ablation
    rows = sorted(result.grid, key=lambda r: -r.z)
    mi_ok, lat_ok = result.grid_trend_holds()
    desc = ", ".join(f"Z={r.z}: {100 * r.miou:.2f} mIoU / {1e3 * r.latency_median:.1f} ms" for r in rows)
    record(9, mi_ok and lat_ok, f"{desc} (mIoU trend ok={mi_ok}, latency trend ok={lat_ok})")


def test_10_determinism(tmp_path, capsys):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train-toy", "--out", str(out), "--steps", "20", "--scenes", "2", "--seed", "5"]) == 0
        runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    same = runs[0] == runs[1]
    a = bench_latency(ModelConfig(), iterations=10).median
    b = bench_latency(ModelConfig(), iterations=10).median
    spread = abs(a - b) / min(a, b)
    capsys.readouterr()
    record(10, same and spread < 0.2,
           f"two train-toy runs identical (traces + {len(runs[0])} checkpoint files)={same}; "
           f"bench medians {1e3 * a:.1f} / {1e3 * b:.1f} ms differ {100 * spread:.1f}% (< 20%)")
