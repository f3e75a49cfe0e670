"""Occupancy grids, IoU / mIoU evaluation and the DAOV voxel file format."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

from .grid import GridSpec
from .tensor import DimensionError

VOXEL_MAGIC = b"DAOV"


@dataclass
class OccupancyGrid:
    labels: np.ndarray  # (Z, Y, X) integer class ids
    grid: GridSpec
    mask: np.ndarray | None = None  # (Z, Y, X) bool, True = visible
    num_classes: int = 256

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise TypeError("labels must be integers")
        if self.labels.shape != self.grid.shape_zyx:
            raise DimensionError(f"labels {self.labels.shape} do not match grid {self.grid.shape_zyx}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels outside [0, {self.num_classes})")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.labels.shape:
                raise DimensionError("mask shape does not match labels")


@dataclass
class EvalReport:
    iou: np.ndarray  # per class, NaN where the class is not scored
    miou: float
    counts: dict = field(default_factory=dict)
    mask_mode: str = "masked"

    def to_text(self) -> str:
        lines = [f"mask_mode = {self.mask_mode}", f"miou = {float(self.miou)!r}"]
        for c, v in enumerate(self.iou):
            lines.append(f"iou.{c} = {float(v)!r}")
        for k in sorted(self.counts):
            lines.append(f"count.{k} = {self.counts[k]}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        kv = dict(line.split(" = ", 1) for line in text.splitlines() if " = " in line)
        n = sum(1 for k in kv if k.startswith("iou."))
        iou = np.array([float(kv[f"iou.{c}"]) for c in range(n)])
        counts = {k[6:]: int(v) for k, v in kv.items() if k.startswith("count.")}
        return cls(iou, float(kv["miou"]), counts, kv["mask_mode"])


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int, mask=None) -> np.ndarray:
    """``cm[g, p]`` counts voxels with ground truth ``g`` and prediction ``p``."""
    pred = np.asarray(pred).ravel().astype(np.int64)
    gt = np.asarray(gt).ravel().astype(np.int64)
    if mask is not None:
        keep = np.asarray(mask).ravel()
        pred, gt = pred[keep], gt[keep]
    return np.bincount(gt * num_classes + pred, minlength=num_classes ** 2).reshape(num_classes, num_classes)


def miou(pred: OccupancyGrid, gt: OccupancyGrid, use_mask: bool = True, num_classes: int | None = None,
         empty_class: int = 0, exclude=()) -> EvalReport:
    """Per-class IoU over the (optionally visibility-masked) voxels.

    The mean skips ``empty_class``, anything in ``exclude`` and classes that
    appear in neither grid.  The ground-truth grid's mask is used.
    """
    if pred.labels.shape != gt.labels.shape:
        raise DimensionError(f"prediction {pred.labels.shape} vs ground truth {gt.labels.shape}")
    n = num_classes or int(max(pred.labels.max(initial=0), gt.labels.max(initial=0)) + 1)
    mask = gt.mask if (use_mask and gt.mask is not None) else None
    cm = confusion_matrix(pred.labels, gt.labels, n, mask)
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - np.diag(cm)
    iou = np.full(n, np.nan)
    scored = np.ones(n, dtype=bool)
    scored[empty_class] = False
    for c in exclude:
        scored[c] = False
    scored &= union > 0
    iou[scored] = tp[scored] / union[scored]
    m = float(np.mean(iou[scored])) if scored.any() else float("nan")
    counts = {"voxels": int(cm.sum()), "occupied_gt": int(cm.sum() - cm[empty_class].sum()),
              "occupied_pred": int(cm.sum() - cm[:, empty_class].sum())}
    return EvalReport(iou, m, counts, "masked" if mask is not None else "unmasked")


# -- DAOV format ---------------------------------------------------------------

def write_voxels(fp: BinaryIO, occ: OccupancyGrid) -> None:
    """magic, 6 x f64 bounds, 3 x u32 counts (X, Y, Z), u8 labels in (z, y, x) order,
    u8 mask flag, then a little-bit-order mask bitset when the flag is 1."""
    if occ.labels.max(initial=0) > 255:
        raise ValueError("DAOV stores labels as u8")
    fp.write(VOXEL_MAGIC)
    fp.write(struct.pack("<6d", *occ.grid.bounds))
    fp.write(struct.pack("<3I", *occ.grid.counts))
    fp.write(np.ascontiguousarray(occ.labels, dtype=np.uint8).tobytes())
    if occ.mask is None:
        fp.write(b"\x00")
    else:
        fp.write(b"\x01")
        fp.write(np.packbits(occ.mask.ravel(), bitorder="little").tobytes())


def read_voxels(fp: BinaryIO) -> OccupancyGrid:
    magic = fp.read(4)
    if magic != VOXEL_MAGIC:
        raise ValueError(f"bad voxel magic {magic!r}")
    bounds = struct.unpack("<6d", fp.read(48))
    counts = struct.unpack("<3I", fp.read(12))
    grid = GridSpec(bounds, counts)
    n = grid.num_voxels
    labels = np.frombuffer(fp.read(n), dtype=np.uint8).reshape(grid.shape_zyx).copy()
    mask = None
    if fp.read(1) == b"\x01":
        bits = np.frombuffer(fp.read((n + 7) // 8), dtype=np.uint8)
        mask = np.unpackbits(bits, count=n, bitorder="little").astype(bool).reshape(grid.shape_zyx)
    return OccupancyGrid(labels, grid, mask)


def save_voxels(path, occ: OccupancyGrid) -> None:
    with open(path, "wb") as fp:
        write_voxels(fp, occ)


def load_voxels(path) -> OccupancyGrid:
    with open(path, "rb") as fp:
        return read_voxels(fp)
