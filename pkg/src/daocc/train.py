"""Sample preparation, AdamW, training and evaluation loops."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import build_depth_map, build_height_map, discretize_supervision
from .losses import LossBreakdown, total_loss_vjp
from .metrics import EvalReport, OccupancyGrid, confusion_matrix, miou
from .model import DAOcc, ModelConfig
from .scenegen import Scene, generate_scene, random_scene_spec
from .tensor import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, breakdown: LossBreakdown):
        self.breakdown = breakdown
        super().__init__(f"non-finite loss: {breakdown.raw}")


@dataclass
class Sample:
    images: np.ndarray
    rigs: list
    targets: dict
    occupancy: OccupancyGrid


def make_sample(scene: Scene, cfg: ModelConfig) -> Sample:
    """Images plus LiDAR-derived depth/height one-hots at feature resolution."""
    stride = cfg.stride
    d1, dv, h1, hv = [], [], [], []
    for rig in scene.rigs:
        small = rig.scaled(stride)
        dm = build_depth_map(small, scene.cloud)
        hm = build_height_map(small, scene.cloud)
        d1.append(discretize_supervision(dm, cfg.depth_binspec, cfg.clamp_supervision))
        h1.append(discretize_supervision(hm, cfg.height_binspec, cfg.clamp_supervision))
        dv.append(dm.valid & (d1[-1].sum(axis=0) > 0))
        hv.append(hm.valid & (h1[-1].sum(axis=0) > 0))
    occ = scene.occupancy
    if occ.labels.shape != cfg.occ_grid.shape_zyx:
        raise ValueError(f"scene grid {occ.labels.shape} does not match model output {cfg.occ_grid.shape_zyx}")
    targets = {
        "depth_onehot": np.stack(d1), "depth_valid": np.stack(dv),
        "height_onehot": np.stack(h1), "height_valid": np.stack(hv),
        "labels": occ.labels[None].astype(np.int64),
        "mask": None if occ.mask is None else occ.mask[None],
    }
    return Sample(scene.images, scene.rigs, targets, occ)


def make_dataset(seeds, cfg: ModelConfig, **spec_kw) -> list[Sample]:
    return [make_sample(generate_scene(random_scene_spec(int(s), **spec_kw)), cfg) for s in seeds]


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params: dict, lr=1e-4, weight_decay=0.05, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.wd, self.betas, self.eps = lr, weight_decay, betas, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float | None = None) -> dict:
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        out = {}
        for k, p in params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            if lr == 0.0:
                out[k] = p
                continue
            upd = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            out[k] = p - lr * (upd + self.wd * p)
        return out


def loss_and_grads(model: DAOcc, sample: Sample):
    cfg = model.config
    outs, vjp = model.forward_vjp(sample.images, sample.rigs)
    breakdown, loss_vjp = total_loss_vjp(outs.depth_score, outs.height_score, outs.logits, sample.targets,
                                         cfg.loss_weights, cfg.use_mask, cfg.empty_class)
    if not np.isfinite(breakdown.total):
        raise NonFiniteLossError(breakdown)
    gd, gh, gl = loss_vjp()
    return breakdown, vjp(gd, gh, gl), outs


@dataclass
class Trainer:
    model: DAOcc
    optimizer: AdamW = None  # type: ignore[assignment]
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.optimizer is None:
            cfg = self.model.config
            self.optimizer = AdamW(self.model.params, cfg.lr, cfg.weight_decay)


def train_step(trainer: Trainer, sample: Sample, learning_rate: float | None = None) -> LossBreakdown:
    """One forward/backward/AdamW update on a single scene."""
    breakdown, grads, _ = loss_and_grads(trainer.model, sample)
    trainer.model.params = trainer.optimizer.step(trainer.model.params, grads, learning_rate)
    trainer.history.append(breakdown.total)
    return breakdown


def cosine_lr(step, total, peak, warmup=50):
    if step < warmup:
        return peak * (step + 1) / warmup
    frac = (step - warmup) / max(1, total - warmup)
    return peak * 0.5 * (1.0 + np.cos(np.pi * min(frac, 1.0)))


def train(cfg: ModelConfig, data: list[Sample], steps: int, lr: float | None = None, log_every: int = 0,
          schedule: bool = True) -> Trainer:
    """Deterministic training: scenes are visited in a seeded shuffled order."""
    trainer = Trainer(DAOcc(cfg))
    peak = cfg.lr if lr is None else lr
    rng = np.random.default_rng(cfg.seed + 1)
    order = []
    for step in range(steps):
        if not order:
            order = list(rng.permutation(len(data)))
        sample = data[order.pop()]
        rate = cosine_lr(step, steps, peak) if schedule else peak
        bd = train_step(trainer, sample, rate)
        if log_every and (step % log_every == 0 or step == steps - 1):
            log.info("step %d lr %.2e %s", step, rate, bd.as_text())
    return trainer


def evaluate(model: DAOcc, data: list[Sample], use_mask: bool = True) -> EvalReport:
    """Pooled-confusion mIoU over a list of scenes."""
    cfg = model.config
    n = cfg.num_classes
    cm = np.zeros((n, n), dtype=np.int64)
    for s in data:
        pred = model.forward(s.images, s.rigs).predicted_labels()
        mask = s.occupancy.mask if use_mask else None
        cm += confusion_matrix(pred, s.occupancy.labels, n, mask)
    return report_from_confusion(cm, cfg.empty_class, use_mask)


def report_from_confusion(cm, empty_class=0, masked=True, exclude=()) -> EvalReport:
    n = cm.shape[0]
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - np.diag(cm)
    scored = union > 0
    scored[empty_class] = False
    for c in exclude:
        scored[c] = False
    iou = np.full(n, np.nan)
    iou[scored] = tp[scored] / union[scored]
    m = float(np.mean(iou[scored])) if scored.any() else float("nan")
    counts = {"voxels": int(cm.sum())}
    return EvalReport(iou, m, counts, "masked" if masked else "unmasked")


def predict_grid(model: DAOcc, sample: Sample) -> OccupancyGrid:
    labels = model.forward(sample.images, sample.rigs).predicted_labels()
    return OccupancyGrid(labels, model.config.occ_grid, sample.occupancy.mask, model.config.num_classes)


def save_model(model: DAOcc, directory) -> None:
    from pathlib import Path

    save_checkpoint(directory, model.params)
    (Path(directory) / "config.txt").write_text(model.config.to_text())


def load_model(directory) -> DAOcc:
    from pathlib import Path

    cfg = ModelConfig.from_text((Path(directory) / "config.txt").read_text())
    return DAOcc(cfg, load_checkpoint(directory))


__all__ = ["AdamW", "loss_and_grads", "train_step", "Sample", "Trainer", "evaluate", "load_model", "make_dataset", "make_sample", "miou",
           "save_model", "train"]
