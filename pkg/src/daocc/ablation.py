"""Toy-scale ablations: the DHA/DBA on-off matrix and the height-grid resolution sweep.

Every configuration is trained from the same initialization seed(s) on the
same generated training scenes and scored on the same held-out scenes, so
rows differ only in the ablated setting.  With several ``init_seeds`` a
row's mIoU is the mean over seeds.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .bench import bench_latency
from .flops import count_flops
from .model import ModelConfig, ablation_config
from .train import evaluate, make_dataset, train

log = logging.getLogger(__name__)

MATRIX = (("DHA+DBA", True, True), ("DHA only", True, False), ("DBA only", False, True), ("neither", False, False))


@dataclass
class AblationSettings:
    steps: int = 2000
    lr: float = 3e-3
    train_seeds: tuple = tuple(range(200))
    test_seeds: tuple = tuple(range(1000, 1040))
    init_seeds: tuple = (0, 1)
    grid_z: tuple = (16, 8, 4)
    bench_iterations: int = 10


@dataclass
class AblationRow:
    name: str
    use_dha: bool
    use_dba: bool
    z: int
    miou: float  # mean over init seeds
    per_seed: list = field(default_factory=list)
    macs: int = 0
    latency_median: float = float("nan")
    train_seconds: float = 0.0


@dataclass
class AblationResult:
    matrix: list  # AblationRow for each DHA/DBA setting at the base grid
    grid: list  # AblationRow for each height-grid Z, DHA+DBA on

    def row(self, name) -> AblationRow:
        return next(r for r in self.matrix if r.name == name)

    def matrix_ordering_holds(self, margin: float = 0.01) -> bool:
        """Full >= DHA only >= neither, full >= DBA only, full - neither >= ``margin``."""
        m = {r.name: r.miou for r in self.matrix}
        return (m["DHA+DBA"] >= m["DHA only"] >= m["neither"] and m["DHA+DBA"] >= m["DBA only"]
                and m["DHA+DBA"] - m["neither"] >= margin)

    def grid_trend_holds(self) -> tuple[bool, bool]:
        """(mIoU non-increasing as Z shrinks, latency non-increasing as Z shrinks)."""
        rows = sorted(self.grid, key=lambda r: -r.z)
        mi = all(a.miou >= b.miou for a, b in zip(rows, rows[1:]))
        lat = all(a.latency_median >= b.latency_median for a, b in zip(rows, rows[1:]))
        return mi, lat

    def table(self) -> str:
        out = ["DHA/DBA matrix", f"{'config':<10} {'DHA':>4} {'DBA':>4} {'Z':>3} {'mIoU':>8} {'GMACs':>8} {'train s':>8}"]
        for r in self.matrix:
            out.append(f"{r.name:<10} {'y' if r.use_dha else 'n':>4} {'y' if r.use_dba else 'n':>4} {r.z:>3} "
                       f"{100 * r.miou:8.2f} {r.macs / 1e9:8.4f} {r.train_seconds:8.1f}")
        out.append("")
        out.append("height grid")
        out.append(f"{'height Z':<10} {'mIoU':>8} {'GMACs':>8} {'GFLOPs':>8} {'median ms':>10}")
        for r in sorted(self.grid, key=lambda r: -r.z):
            out.append(f"{r.z:<10} {100 * r.miou:8.2f} {r.macs / 1e9:8.4f} {2 * r.macs / 1e9:8.4f} "
                       f"{1e3 * r.latency_median:10.2f}")
        return "\n".join(out) + "\n"


def _train_and_score(cfg, settings, train_data, test_data):
    scores = []
    t0 = time.perf_counter()
    for s in settings.init_seeds:
        trainer = train(replace(cfg, seed=int(s)), train_data, settings.steps, settings.lr)
        scores.append(evaluate(trainer.model, test_data).miou)
    return float(np.mean(scores)), scores, time.perf_counter() - t0


def run_ablation(base: ModelConfig | None = None, settings: AblationSettings | None = None,
                 matrix: bool = True, grid: bool = True) -> AblationResult:
    base = base or ModelConfig()
    settings = settings or AblationSettings()
    cache: dict = {}

    def data(cfg):
        # height supervision is binned per z layer, so each Z needs its own targets
        key = cfg.height_binspec
        if key not in cache:
            cache.clear()
            cache[key] = (make_dataset(settings.train_seeds, cfg), make_dataset(settings.test_seeds, cfg))
        return cache[key]

    Z0 = base.height_counts[2]
    result = AblationResult([], [])
    if matrix:
        for name, dha, dba in MATRIX:
            cfg = ablation_config(base, dha, dba)
            m, per, secs = _train_and_score(cfg, settings, *data(cfg))
            log.info("%s: mIoU %.4f (%s) in %.0fs", name, m, per, secs)
            result.matrix.append(AblationRow(name, dha, dba, Z0, m, per, count_flops(cfg).total_macs, train_seconds=secs))
    if grid:
        for z in settings.grid_z:
            cfg = ablation_config(base, True, True, z)
            reuse = [r for r in result.matrix if r.name == "DHA+DBA" and r.z == z]
            if reuse:
                m, per, secs = reuse[0].miou, reuse[0].per_seed, reuse[0].train_seconds
            else:
                m, per, secs = _train_and_score(cfg, settings, *data(cfg))
            lat = bench_latency(cfg, settings.bench_iterations).median
            log.info("Z=%d: mIoU %.4f, latency %.4fs", z, m, lat)
            result.grid.append(AblationRow(f"Z={z}", True, True, z, m, per, count_flops(cfg).total_macs, lat, secs))
    return result
