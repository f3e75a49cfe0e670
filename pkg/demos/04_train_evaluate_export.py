"""Train the toy model briefly, evaluate masked vs unmasked mIoU, export voxels.

A few hundred steps on a handful of scenes take a couple of minutes on one
core; the ablation benchmark uses 2000 steps on 200 scenes.

Run: python demos/04_train_evaluate_export.py [steps]
"""
import sys
import tempfile
from pathlib import Path

from daocc.metrics import load_voxels, save_voxels
from daocc.model import ModelConfig
from daocc.scenegen import CLASS_NAMES
from daocc.train import evaluate, load_model, make_dataset, predict_grid, save_model, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 200
cfg = ModelConfig()
train_data = make_dataset(range(0, 8), cfg)
test_data = make_dataset(range(1000, 1004), cfg)

trainer = train(cfg, train_data, steps, lr=3e-3)
h = trainer.history
print(f"trained {steps} steps: loss {h[0]:.3f} -> {sum(h[-10:]) / len(h[-10:]):.3f} (mean of last 10)")

for masked in (True, False):
    rep = evaluate(trainer.model, test_data, use_mask=masked)
    per = ", ".join(f"{CLASS_NAMES[c]} {v:.2f}" for c, v in enumerate(rep.iou) if c and v == v)
    print(f"{rep.mask_mode:>8} mIoU {rep.miou:.3f} over {rep.counts['voxels']} voxels ({per})")

with tempfile.TemporaryDirectory() as d:
    save_model(trainer.model, d)
    model = load_model(d)
    pred = predict_grid(model, test_data[0])
    path = Path(d) / "prediction.daov"
    save_voxels(path, pred)
    back = load_voxels(path)
    print(f"\nexported prediction for scene 1000 to DAOV ({path.stat().st_size} bytes); "
          f"{int((back.labels != 0).sum())} occupied voxels predicted vs "
          f"{int((test_data[0].occupancy.labels != 0).sum())} in ground truth")
