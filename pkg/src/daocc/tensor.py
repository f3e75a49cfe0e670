"""Dense float64 tensors, gradient accumulators and the DAOT blob format.

A tensor here is simply a C-contiguous ``numpy.ndarray`` of dtype float64.
``as_tensor`` enforces that contract at module boundaries.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO

import numpy as np

DTYPE = np.float64
TENSOR_MAGIC = b"DAOT"


class DimensionError(ValueError):
    """Raised when operand shapes do not satisfy an operation's contract."""


class NumericError(ArithmeticError):
    """Raised on non-finite inputs to operations that require finite data."""


def as_tensor(x, copy: bool = False) -> np.ndarray:
    arr = np.array(x, dtype=DTYPE, copy=copy, order="C") if copy else np.ascontiguousarray(x, dtype=DTYPE)
    if arr.ndim and min(arr.shape) < 1:
        raise DimensionError(f"all extents must be >= 1, got {arr.shape}")
    return arr


@dataclass
class Dual:
    """A value paired with an accumulated cotangent of identical shape."""

    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.value = as_tensor(self.value)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise DimensionError(f"grad shape {self.grad.shape} != value shape {self.value.shape}")

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.value.shape:
            raise DimensionError(f"cotangent shape {g.shape} != value shape {self.value.shape}")
        self.grad += g

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def write_tensor(fp: BinaryIO, x: np.ndarray) -> None:
    """Write ``x`` as: magic, u32 rank, u64 extents, little-endian f64 data."""
    x = np.asarray(x, dtype=DTYPE)
    fp.write(TENSOR_MAGIC)
    fp.write(struct.pack("<I", x.ndim))
    fp.write(struct.pack(f"<{x.ndim}Q", *x.shape))
    fp.write(np.ascontiguousarray(x, dtype="<f8").tobytes())


def read_tensor(fp: BinaryIO) -> np.ndarray:
    magic = fp.read(4)
    if magic != TENSOR_MAGIC:
        raise ValueError(f"bad tensor magic {magic!r}")
    (rank,) = struct.unpack("<I", fp.read(4))
    shape = struct.unpack(f"<{rank}Q", fp.read(8 * rank))
    n = int(np.prod(shape, dtype=np.int64))
    buf = fp.read(8 * n)
    if len(buf) != 8 * n:
        raise ValueError("truncated tensor payload")
    return np.frombuffer(buf, dtype="<f8").astype(DTYPE).reshape(shape)


def save_tensor(path, x: np.ndarray) -> None:
    with open(path, "wb") as fp:
        write_tensor(fp, x)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fp:
        return read_tensor(fp)


def save_checkpoint(directory, params: dict[str, np.ndarray]) -> None:
    """Write one DAOT blob per parameter plus a ``manifest.txt`` of names and shapes."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for name in sorted(params):
        value = params[name]
        fname = name.replace("/", "__") + ".daot"
        save_tensor(directory / fname, value)
        shape = "x".join(str(s) for s in np.shape(value)) or "scalar"
        lines.append(f"{name} {shape} {fname}")
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_checkpoint(directory) -> dict[str, np.ndarray]:
    directory = Path(directory)
    params = {}
    for line in (directory / "manifest.txt").read_text().splitlines():
        if not line.strip():
            continue
        name, shape, fname = line.split()
        value = load_tensor(directory / fname)
        expected = () if shape == "scalar" else tuple(int(s) for s in shape.split("x"))
        if value.shape != expected:
            raise DimensionError(f"{name}: manifest shape {expected} != blob shape {value.shape}")
        params[name] = value
    return params
