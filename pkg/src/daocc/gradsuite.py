"""The gradient-check matrix: every differentiable op plus a miniature end-to-end model.

Inputs are drawn at generic points (no exact zeros feeding a positive-part
nonlinearity, probabilities away from the clip bounds) so central
differences never straddle a kink.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .attention import DAParams, da_forward_vjp, dba_forward_vjp, dha_forward_vjp
from .gradcheck import GradcheckReport, gradcheck
from .grid import GridSpec
from .losses import bce_scores_vjp, cross_entropy_vjp, scal_geo_vjp, scal_sem_vjp, total_loss_vjp
from .model import TOY_BOUNDS, DAOcc, ModelConfig
from .ops import (avgpool_axis_vjp, bilinear_resize_vjp, conv1d_depthwise_vjp, conv2d_vjp, depthwise_conv_axis_vjp,
                  mlp_vjp, relu_vjp, softmax_vjp)
from .view_transform import compute_ranks, splat_bev_vjp, splat_height_vjp

EPSILON = 1e-5
OP_TOLERANCE = 1e-4
E2E_TOLERANCE = 1e-3


@dataclass
class CheckResult:
    name: str
    report: GradcheckReport
    seconds: float

    @property
    def passed(self) -> bool:
        return self.report.passed

    def line(self) -> str:
        return (f"{'PASS' if self.passed else 'FAIL'} {self.name}: max rel err "
                f"{self.report.max_rel_error:.3e} (tol {self.report.tolerance:g}), {self.seconds:.2f}s")


def _da_op(direction, shape, rng):
    """Gradcheck closure over ``(x, w1, b1, w2, b2, pos)`` for one DA variant."""
    axis = 2 if direction == "h" else 3
    L = shape[axis]
    p0 = DAParams.init(L, 3, direction, rng, scale=1.0)
    p0.b1 = rng.uniform(0.2, 0.5, size=3)
    p0.pos = rng.standard_normal(p0.pos.shape)
    x0 = rng.standard_normal(shape)

    def op(x, w1, b1, w2, b2, pos):
        p = DAParams(w1, b1, w2, b2, pos, direction)
        out, back = da_forward_vjp(x, p)

        def vjp(g):
            gx, gr = back(g)
            return (gx, gr["w1"], gr["b1"], gr["w2"], gr["b2"], gr["pos"])

        return out, vjp

    return op, [x0, p0.w1, p0.b1, p0.w2, p0.b2, p0.pos]


def op_cases(rng):
    """``(name, op, inputs)`` for every differentiable primitive."""
    cases = []

    def add(name, op, inputs):
        cases.append((name, op, inputs))

    add("depthwise_conv_axis", lambda x, k: depthwise_conv_axis_vjp(x, k, 3),
        [rng.standard_normal((2, 3, 4, 7)), rng.standard_normal((2, 3, 3))])
    add("conv1d_depthwise", lambda x, k: conv1d_depthwise_vjp(x, k),
        [rng.standard_normal((2, 3, 8)), rng.standard_normal((2, 3, 4))])

    def mlp_op(x, w1, b1, w2, b2):
        out, back = mlp_vjp(x, [(w1, b1), (w2, b2)])

        def vjp(g):
            gx, ((g1, gb1), (g2, gb2)) = back(g)
            return gx, g1, gb1, g2, gb2

        return out, vjp

    add("mlp", mlp_op, [rng.standard_normal((5, 4)), rng.standard_normal((4, 6)), rng.standard_normal(6),
                        rng.standard_normal((6, 3)), rng.standard_normal(3)])
    add("softmax", lambda x: softmax_vjp(x, axis=1), [rng.standard_normal((2, 5, 3))])
    add("avgpool", lambda x: avgpool_axis_vjp(x, 3), [rng.standard_normal((2, 3, 4, 5))])
    x_relu = rng.standard_normal((3, 4))
    x_relu = np.where(np.abs(x_relu) < 0.1, 0.5, x_relu)
    add("relu", relu_vjp, [x_relu])
    for stride, pad, k in ((1, 1, 3), (2, 1, 3), (1, 0, 1)):
        add(f"conv2d_s{stride}_p{pad}_k{k}",
            lambda x, w, b, s=stride, p=pad: conv2d_vjp(x, w, b, s, p),
            [rng.standard_normal((2, 3, 6, 5)), rng.standard_normal((4, 3, k, k)), rng.standard_normal(4)])
    add("bilinear_resize_up", lambda x: bilinear_resize_vjp(x, (7, 9)), [rng.standard_normal((2, 3, 4, 5))])
    add("bilinear_resize_down", lambda x: bilinear_resize_vjp(x, (3, 2)), [rng.standard_normal((2, 3, 6, 5))])

    grid = GridSpec((-2.0, -2.0, -1.0, 2.0, 2.0, 1.0), (6, 5, 3))
    pts = rng.uniform(-2.5, 2.5, size=(2, 4, 3, 5, 3))
    idx3 = compute_ranks(pts, grid)
    idx2 = compute_ranks(pts, GridSpec(grid.bounds, (6, 5, 1)))
    feat, score = rng.standard_normal((2, 3, 3, 5)), rng.random((2, 4, 3, 5))
    add("splat_bev", lambda f, s: splat_bev_vjp(f, s, idx2), [feat, score])
    add("splat_height", lambda f, s: splat_height_vjp(f, s, idx3), [feat, score])

    add("da_h", *_da_op("h", (2, 3, 5, 4), rng))
    add("da_v", *_da_op("v", (2, 3, 4, 6), rng))

    def da_injected(x, k, pos):
        p = DAParams.init(x.shape[2], 2, "h", 0)
        p.pos = pos
        out, back = da_forward_vjp(x, p, kernel=k)

        def vjp(g):
            gx, gr = back(g)
            return gx, gr["kernel"], gr["pos"]

        return out, vjp

    add("da_injected_kernel", da_injected,
        [rng.standard_normal((1, 2, 5, 3)), rng.standard_normal((1, 2, 5)), rng.standard_normal((5, 1))])

    ph = DAParams.init(4, 3, "h", rng, scale=1.0)
    pv = DAParams.init(5, 3, "v", rng, scale=1.0)
    ph.b1, pv.b1 = rng.uniform(0.2, 0.5, 3), rng.uniform(0.2, 0.5, 3)

    def dba_op(x, *arrs):
        a, b = arrs[:5], arrs[5:]
        out, back = dba_forward_vjp(x, DAParams(*a, "h"), DAParams(*b, "v"))

        def vjp(g):
            gx, gh, gv = back(g)
            return (gx,) + tuple(gh[k] for k in ("w1", "b1", "w2", "b2", "pos")) + tuple(
                gv[k] for k in ("w1", "b1", "w2", "b2", "pos"))

        return out, vjp

    add("dba", dba_op, [rng.standard_normal((1, 2, 4, 5))] + list(ph.arrays().values()) + list(pv.arrays().values()))

    pz = DAParams.init(3, 3, "h", rng, scale=1.0)
    pz.b1 = rng.uniform(0.2, 0.5, 3)

    def dha_op(x, *arrs):
        out, back = dha_forward_vjp(x, DAParams(*arrs, "h"), 2, 3)

        def vjp(g):
            gx, gr = back(g)
            return (gx,) + tuple(gr[k] for k in ("w1", "b1", "w2", "b2", "pos"))

        return out, vjp

    add("dha", dha_op, [rng.standard_normal((1, 2, 3, 6))] + list(pz.arrays().values()))

    probs = rng.uniform(0.05, 0.95, size=(2, 4, 3, 3))
    onehot = np.eye(4)[rng.integers(0, 4, size=(2, 3, 3))].transpose(0, 3, 1, 2)
    valid = rng.random((2, 3, 3)) < 0.7
    add("bce_scores", lambda p: (lambda v, b: (np.float64(v), lambda g: g * b()))(*bce_scores_vjp(p, onehot, valid)),
        [probs])
    logits = rng.standard_normal((1, 4, 2, 3, 3))
    labels = rng.integers(0, 4, size=(1, 2, 3, 3))
    labels.flat[:4] = [0, 1, 2, 3]
    mask = rng.random(labels.shape) < 0.8
    mask.flat[:4] = True
    for name, fn in (("cross_entropy", cross_entropy_vjp), ("scal_sem", scal_sem_vjp), ("scal_geo", scal_geo_vjp)):
        add(name, lambda lg, fn=fn: (lambda v, b: (np.float64(v), lambda g: g * b()))(*fn(lg, labels, mask)),
            [logits])
    hprobs = rng.uniform(0.05, 0.95, size=(2, 4, 3, 3))
    targets = {"depth_onehot": onehot, "depth_valid": valid, "height_onehot": onehot, "height_valid": valid,
               "labels": labels, "mask": mask}

    def total_op(d, h, lg):
        bd, back = total_loss_vjp(d, h, lg, targets)
        return np.float64(bd.total), lambda g: tuple(g * x for x in back())

    add("total_loss", total_op, [probs, hprobs, logits])
    return cases


def run_op_checks(tolerance=OP_TOLERANCE, epsilon=EPSILON, seed=0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    for name, op, inputs in op_cases(rng):
        t0 = time.perf_counter()
        rep = gradcheck(op, inputs, epsilon, tolerance, seed=seed, raise_on_failure=False)
        out.append(CheckResult(name, rep, time.perf_counter() - t0))
    return out


# -- miniature end-to-end model ---------------------------------------------------------------------


def mini_config(**kw) -> ModelConfig:
    """16x16 images, height grid 4x8x8, BEV grid 1x16x16, C=4, 4 classes."""
    base = dict(image_size=(16, 16), num_cameras=4, stride=8, backbone_channels=(4, 4, 4), channels=4,
                fuse_channels=4, bev_counts=(16, 16), height_counts=(8, 8, 4), z_out=4,
                depth_bins=(6, 0.5, 10.1), num_classes=4)
    base.update(kw)
    return ModelConfig(**base)


def mini_sample(cfg: ModelConfig, seed: int = 3):
    """A generated scene at the miniature resolution, labels folded into ``num_classes``."""
    from .scenegen import generate_scene, random_scene_spec
    from .train import make_sample

    spec = random_scene_spec(seed, grid=GridSpec(TOY_BOUNDS, cfg.occ_grid.counts), image_size=cfg.image_size)
    scene = generate_scene(spec)
    scene.occupancy.labels = np.minimum(scene.occupancy.labels, cfg.num_classes - 1)
    return make_sample(scene, cfg)


def generic_params(params: dict, rng, scale: float = 0.05) -> dict:
    """Perturb every parameter; hidden DA biases are made positive so no unit is dead."""
    out = {}
    for k, v in params.items():
        p = v + scale * rng.standard_normal(v.shape)
        if k.endswith(".b1"):
            p = np.abs(p) + 0.1
        out[k] = p
    return out


def run_e2e_check(tolerance=E2E_TOLERANCE, epsilon=EPSILON, seed=0, max_coords=6) -> CheckResult:
    """Gradcheck of the total loss w.r.t. every parameter group of the miniature model."""
    from .train import loss_and_grads

    t0 = time.perf_counter()
    cfg = mini_config()
    sample = mini_sample(cfg)
    model = DAOcc(cfg)
    model = model.with_params(generic_params(model.params, np.random.default_rng(seed + 7)))
    names = sorted(model.params)

    def op(*arrs):
        bd, grads, _ = loss_and_grads(model.with_params(dict(zip(names, arrs))), sample)
        return np.float64(bd.total), lambda g: tuple(g * grads[n] for n in names)

    rep = gradcheck(op, [model.params[n] for n in names], epsilon, tolerance, names=names,
                    max_coords=max_coords, seed=seed, raise_on_failure=False)
    return CheckResult("end_to_end_miniature", rep, time.perf_counter() - t0)
