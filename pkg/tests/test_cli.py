import numpy as np
import pytest

from daocc.cli import main
from daocc.metrics import EvalReport, load_voxels


def test_unknown_subcommand_and_flag_are_usage_errors(capsys):
    for argv in (["nope"], ["oracle-suite", "--bogus"], []):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code != 0


@pytest.mark.slow
def test_gradcheck_exits_zero(capsys):
    assert main(["gradcheck", "--tolerance", "1e-4"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "passed" in out


def test_oracle_suite_exits_zero(capsys):
    assert main(["oracle-suite"]) == 0
    assert "FAIL" not in capsys.readouterr().out


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpt")
    assert main(["train-toy", "--out", str(out), "--steps", "3", "--scenes", "2"]) == 0
    return out


def test_train_toy_writes_checkpoint(checkpoint):
    names = {p.name for p in checkpoint.iterdir()}
    assert {"manifest.txt", "config.txt", "loss_trace.txt"} <= names
    trace = (checkpoint / "loss_trace.txt").read_text().split("\n")
    assert len([t for t in trace if t]) == 3


def test_eval_masked_and_unmasked_differ(checkpoint, tmp_path, capsys):
    a, b = tmp_path / "masked.txt", tmp_path / "unmasked.txt"
    assert main(["eval", "--checkpoint", str(checkpoint), "--scenes", "1", "--out", str(a)]) == 0
    assert main(["eval", "--checkpoint", str(checkpoint), "--scenes", "1", "--no-mask", "--out", str(b)]) == 0
    ra, rb = EvalReport.from_text(a.read_text()), EvalReport.from_text(b.read_text())
    assert ra.mask_mode == "masked" and rb.mask_mode == "unmasked"
    assert ra.counts["voxels"] < rb.counts["voxels"]  # the generated scene has occluded voxels
    assert ra.miou != rb.miou
    assert "miou =" in capsys.readouterr().out


def test_export_ground_truth_and_prediction(checkpoint, tmp_path):
    gt, pred, scene = tmp_path / "gt.daov", tmp_path / "pred.daov", tmp_path / "scene.daos"
    assert main(["export", "--out", str(gt), "--seed", "4", "--scene-out", str(scene)]) == 0
    assert main(["export", "--out", str(pred), "--seed", "4", "--checkpoint", str(checkpoint), "--no-mask"]) == 0
    g, p = load_voxels(gt), load_voxels(pred)
    assert g.labels.shape == p.labels.shape == (16, 32, 32)
    assert g.mask is not None and p.mask is None
    assert g.labels.any()
    assert scene.read_bytes()[:6] == b"DAOS 1"


def test_bench_prints_latency_and_flops(capsys):
    assert main(["bench", "--iterations", "1", "--warmup", "1", "--z", "4"]) == 0
    out = capsys.readouterr().out
    assert "median_s" in out and "total =" in out


def test_ablate_prints_four_matrix_rows(capsys):
    argv = ["ablate", "--steps", "1", "--train-scenes", "1", "--test-scenes", "1", "--matrix-only"]
    assert main(argv) == 0
    out = capsys.readouterr().out
    for name in ("DHA+DBA", "DHA only", "DBA only", "neither"):
        assert sum(line.startswith(name) for line in out.splitlines()) == 1
    assert "matrix ordering holds" in out


def test_threads_env_var_is_accepted(monkeypatch, capsys):
    monkeypatch.setenv("DAOCC_THREADS", "1")
    assert main(["--threads", "1", "oracle-suite", "--seed", "1"]) == 0
    np.testing.assert_equal(True, "passed" in capsys.readouterr().out)
