"""Analytic multiply-add counts and measured latency as the height grid shrinks.

Run: python demos/05_cost_model.py
"""
from dataclasses import replace

from threadpoolctl import threadpool_limits

from daocc.bench import bench_latency
from daocc.flops import count_flops
from daocc.model import ModelConfig

base = ModelConfig()
print(f"{'module':<14}" + "".join(f"{'Z=' + str(z):>12}" for z in (16, 8, 4)))
reports = {z: count_flops(replace(base, height_counts=(32, 32, z))) for z in (16, 8, 4)}
for module in reports[16].macs:
    print(f"{module:<14}" + "".join(f"{reports[z].macs[module]:>12,}" for z in (16, 8, 4)))
print(f"{'total MACs':<14}" + "".join(f"{reports[z].total_macs:>12,}" for z in (16, 8, 4)))

occ3d = count_flops(ModelConfig.occ3d())
print(f"\nOcc3D-sized shapes (not trainable here): {occ3d.total_flops / 1e9:.1f} GFLOPs")

with threadpool_limits(limits=1):
    for z in (16, 8, 4):
        stats = bench_latency(replace(base, height_counts=(32, 32, z)), iterations=10)
        print(f"Z={z:<3} median {1e3 * stats.median:6.1f} ms  p95 {1e3 * stats.p95:6.1f} ms (one thread)")
