"""Wall-clock latency of single-scene forward passes."""
from __future__ import annotations

import os
import platform
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_info

from .model import DAOcc, ModelConfig
from .scenegen import SceneSpec


@dataclass
class LatencyStats:
    samples: list  # seconds per forward, after warmup
    environment: dict = field(default_factory=dict)

    @property
    def median(self) -> float:
        return float(np.median(self.samples))

    @property
    def p95(self) -> float:
        return float(np.percentile(self.samples, 95))

    def to_text(self) -> str:
        lines = [f"iterations = {len(self.samples)}", f"median_s = {self.median!r}", f"p95_s = {self.p95!r}"]
        lines += [f"env.{k} = {v}" for k, v in sorted(self.environment.items())]
        return "\n".join(lines) + "\n"


def environment() -> dict:
    blas = ";".join(f"{i.get('internal_api')}:{i.get('num_threads')}" for i in threadpool_info()) or "none"
    return {"python": platform.python_version(), "numpy": np.__version__, "machine": platform.machine(),
            "processor": platform.processor() or "unknown", "cpus": os.cpu_count(), "blas": blas}


def bench_latency(config: ModelConfig, iterations: int = 10, warmup: int = 2, seed: int = 0) -> LatencyStats:
    """Median / p95 wall-clock of ``model.forward`` on a fixed random input.

    Splat indices are built during warmup (they depend only on calibration),
    so the timed region is the per-frame network cost.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    model = DAOcc(config)
    spec = SceneSpec(seed=seed, grid=config.occ_grid, num_cameras=config.num_cameras, image_size=config.image_size)
    rigs = spec.rigs()
    images = np.random.default_rng(seed).random((config.num_cameras, 3) + tuple(config.image_size))
    for _ in range(max(warmup, 1)):
        model.forward(images, rigs)
    samples = []
    for _ in range(iterations):
        t0 = time.perf_counter()
        model.forward(images, rigs)
        samples.append(time.perf_counter() - t0)
    return LatencyStats(samples, environment())
