"""Voxel lattice and uniform bin definitions shared by geometry and lifting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned voxel lattice.

    ``bounds`` is ``(x_lo, y_lo, z_lo, x_hi, y_hi, z_hi)`` in meters and
    ``counts`` is ``(X, Y, Z)``.  Cells are half-open ``[lo, hi)``.
    """

    bounds: tuple[float, float, float, float, float, float]
    counts: tuple[int, int, int]

    def __post_init__(self):
        b = tuple(float(v) for v in self.bounds)
        c = tuple(int(v) for v in self.counts)
        if len(b) != 6 or len(c) != 3:
            raise ValueError("bounds needs 6 values and counts 3")
        if not all(b[i + 3] > b[i] for i in range(3)):
            raise ValueError(f"upper bounds must exceed lower bounds: {b}")
        if min(c) < 1:
            raise ValueError(f"voxel counts must be >= 1: {c}")
        object.__setattr__(self, "bounds", b)
        object.__setattr__(self, "counts", c)

    @classmethod
    def occ3d(cls) -> "GridSpec":
        return cls((-40.0, -40.0, -1.0, 40.0, 40.0, 5.4), (200, 200, 16))

    @property
    def lower(self) -> np.ndarray:
        return np.array(self.bounds[:3])

    @property
    def upper(self) -> np.ndarray:
        return np.array(self.bounds[3:])

    @property
    def voxel_size(self) -> np.ndarray:
        return (self.upper - self.lower) / np.array(self.counts, dtype=np.float64)

    @property
    def shape_zyx(self) -> tuple[int, int, int]:
        X, Y, Z = self.counts
        return (Z, Y, X)

    @property
    def num_voxels(self) -> int:
        X, Y, Z = self.counts
        return X * Y * Z

    def centers(self, axis: int) -> np.ndarray:
        """Voxel-center coordinates along ``axis`` (0=x, 1=y, 2=z)."""
        lo, hi, n = self.bounds[axis], self.bounds[axis + 3], self.counts[axis]
        return lo + (2 * np.arange(n) + 1) * (hi - lo) / (2 * n)

    def with_counts(self, counts) -> "GridSpec":
        return GridSpec(self.bounds, tuple(counts))

    def voxel_indices(self, points: np.ndarray):
        """Per-axis floor indices ``(N, 3)`` and an in-grid flag for ``(N, 3)`` points."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        with np.errstate(invalid="ignore"):
            idx = np.floor((points - self.lower) / self.voxel_size)
            valid = np.all(np.isfinite(idx), axis=1)
            valid &= np.all(idx >= 0, axis=1) & np.all(idx < np.array(self.counts), axis=1)
            valid &= np.all(points < self.upper, axis=1)
        idx = np.where(valid[:, None], idx, 0).astype(np.int64)
        return idx, valid


@dataclass(frozen=True)
class BinSpec:
    """``count`` uniform bins over ``[lower, upper)``."""

    count: int
    lower: float
    upper: float

    def __post_init__(self):
        if int(self.count) < 1:
            raise ValueError("bin count must be >= 1")
        if not float(self.upper) > float(self.lower):
            raise ValueError("upper edge must exceed lower edge")

    @property
    def width(self) -> float:
        return (self.upper - self.lower) / self.count

    @property
    def centers(self) -> np.ndarray:
        return self.lower + (2 * np.arange(self.count) + 1) * (self.upper - self.lower) / (2 * self.count)

    @property
    def edges(self) -> np.ndarray:
        return self.lower + np.arange(self.count + 1) * self.width

    def index(self, values, clamp: bool = True) -> np.ndarray:
        """Bin index per value; a value on an interior edge goes to the higher bin.

        Out-of-range values are clamped to the edge bins, or mapped to ``-1``
        when ``clamp`` is false.
        """
        values = np.asarray(values, dtype=np.float64)
        idx = np.floor((values - self.lower) / self.width).astype(np.int64)
        if clamp:
            return np.clip(idx, 0, self.count - 1)
        return np.where((idx >= 0) & (idx < self.count), idx, -1)
