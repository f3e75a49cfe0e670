"""Directional attention: dynamic, position-aware circular convolution along one axis.

For ``dir='h'`` the attended axis is axis 2 of ``[B, C, H, W]`` and for
``dir='v'`` it is axis 3.  Steps for an attended extent ``L``:

1. average-pool the input over the *other* spatial axis -> ``[B, C, L]``;
2. an MLP ``L -> hidden -> L`` (shared over channels) turns each channel's
   pooled profile into a length-``L`` kernel;
3. the input is unrolled to ``2L - 1`` along the attended axis by appending
   its first ``L - 1`` entries;
4. the position encoding (length ``L``, tiled the same way) is added;
5. a valid correlation with the per-sample, per-channel kernel restores
   extent ``L``.

Steps 3 and 5 together are a circular correlation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import avgpool_axis_vjp, depthwise_conv_axis_vjp, mlp_vjp
from .tensor import DimensionError

PARAM_KEYS = ("w1", "b1", "w2", "b2", "pos")


@dataclass
class DAParams:
    w1: np.ndarray  # (L, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden, L)
    b2: np.ndarray  # (L,)
    pos: np.ndarray  # (L, 1) for dir='h', (1, L) for dir='v'
    direction: str

    def __post_init__(self):
        if self.direction not in ("h", "v"):
            raise ValueError(f"direction must be 'h' or 'v', got {self.direction!r}")
        L = self.length
        if self.w1.shape[0] != L or self.w2.shape[1] != L or self.b2.shape != (L,):
            raise DimensionError(f"MLP does not map length {L} to a length-{L} kernel")
        want = (L, 1) if self.direction == "h" else (1, L)
        if self.pos.shape != want:
            raise DimensionError(f"position encoding shape {self.pos.shape}, expected {want}")

    @property
    def length(self) -> int:
        return self.w1.shape[0]

    @property
    def axis(self) -> int:
        return 2 if self.direction == "h" else 3

    @classmethod
    def init(cls, length: int, hidden: int, direction: str, rng=None, scale: float = 0.1) -> "DAParams":
        """Small random MLP whose bias starts the kernel near a unit tap at offset 0."""
        rng = np.random.default_rng(rng)
        b2 = np.zeros(length)
        b2[0] = 1.0
        pos_shape = (length, 1) if direction == "h" else (1, length)
        return cls(
            w1=rng.standard_normal((length, hidden)) * scale / np.sqrt(length),
            b1=np.zeros(hidden),
            w2=rng.standard_normal((hidden, length)) * scale / np.sqrt(hidden),
            b2=b2,
            pos=np.zeros(pos_shape),
            direction=direction,
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_KEYS}

    @classmethod
    def from_arrays(cls, arrays: dict, direction: str) -> "DAParams":
        return cls(*(arrays[k] for k in PARAM_KEYS), direction=direction)


def circular_unroll(x: np.ndarray, axis: int) -> np.ndarray:
    """Append the first ``L - 1`` entries along ``axis`` (``Cat(F, F[:-1])``)."""
    L = x.shape[axis]
    head = np.take(x, np.arange(L - 1), axis=axis)
    return np.concatenate([x, head], axis=axis)


def _fold(g: np.ndarray, L: int, axis: int) -> np.ndarray:
    """Adjoint of :func:`circular_unroll`."""
    gm = np.moveaxis(g, axis, -1)
    out = gm[..., :L].copy()
    out[..., :L - 1] += gm[..., L:]
    return np.moveaxis(out, -1, axis)


def dynamic_kernel_vjp(x: np.ndarray, params: DAParams):
    """Kernel ``[B, C, L]`` generated from the direction-pooled input."""
    axis = params.axis
    other = 3 if axis == 2 else 2
    B, C = x.shape[:2]
    L = x.shape[axis]
    pooled, pool_vjp = avgpool_axis_vjp(x, other)  # [B,C,L,1] or [B,C,1,L]
    rows = pooled.reshape(B * C, L)
    k, mlp_back = mlp_vjp(rows, [(params.w1, params.b1), (params.w2, params.b2)])

    def vjp(gk):
        grows, ((gw1, gb1), (gw2, gb2)) = mlp_back(gk.reshape(B * C, L))
        gx = pool_vjp(grows.reshape(pooled.shape))
        return gx, {"w1": gw1, "b1": gb1, "w2": gw2, "b2": gb2}

    return k.reshape(B, C, L), vjp


def da_forward_vjp(x: np.ndarray, params: DAParams, kernel: np.ndarray | None = None):
    """Directional attention; returns ``(out, vjp)`` with ``vjp(g) -> (gx, grads)``.

    ``kernel`` (``[B, C, L]``) overrides the MLP-generated kernel; the MLP
    parameters then receive zero gradient and ``grads["kernel"]`` holds the
    kernel's cotangent.
    """
    if x.ndim != 4:
        raise DimensionError(f"expected [B,C,H,W], got {x.shape}")
    axis = params.axis
    L = x.shape[axis]
    if params.length != L:
        raise DimensionError(f"params built for extent {params.length}, input has {L} along axis {axis}")
    if kernel is None:
        kern, kern_back = dynamic_kernel_vjp(x, params)
    else:
        kern = np.asarray(kernel, dtype=np.float64)
        if kern.shape != x.shape[:2] + (L,):
            raise DimensionError(f"injected kernel {kern.shape} != {x.shape[:2] + (L,)}")
        kern_back = None
    pos_t = circular_unroll(params.pos, axis - 2)
    unrolled = circular_unroll(x, axis) + pos_t[None, None]
    out, conv_back = depthwise_conv_axis_vjp(unrolled, kern, axis)

    def vjp(g):
        gu, gk = conv_back(g)
        gpos = _fold(gu.sum(axis=(0, 1)).sum(axis=3 - axis, keepdims=True), L, axis - 2)
        gx = _fold(gu, L, axis)
        if kern_back is not None:
            gx2, grads = kern_back(gk)
            gx = gx + gx2
        else:
            grads = {k: np.zeros_like(v) for k, v in params.arrays().items() if k != "pos"}
            grads["kernel"] = gk
        grads["pos"] = gpos.reshape(params.pos.shape)
        return gx, grads

    return out, vjp


def da_forward(x, params: DAParams, kernel=None) -> np.ndarray:
    return da_forward_vjp(x, params, kernel)[0]


def dba_forward_vjp(f_bev, params_h: DAParams, params_v: DAParams):
    """``DA(F, h) + DA(F, v)``; the vjp returns ``(gx, grads_h, grads_v)``."""
    if params_h.direction != "h" or params_v.direction != "v":
        raise ValueError("dba needs one horizontal and one vertical parameter set")
    oh, bh = da_forward_vjp(f_bev, params_h)
    ov, bv = da_forward_vjp(f_bev, params_v)

    def vjp(g):
        gxh, grads_h = bh(g)
        gxv, grads_v = bv(g)
        return gxh + gxv, grads_h, grads_v

    return oh + ov, vjp


def dba_forward(f_bev, params_h, params_v) -> np.ndarray:
    return dba_forward_vjp(f_bev, params_h, params_v)[0]


def dha_forward_vjp(f_height, params: DAParams, Y: int, X: int):
    """``[B,C,Z,Y*X] -> [B,C*Z,Y,X]``: attend along Z, unslice, stack Z into channels.

    Output channel ``c*Z + z`` holds input channel ``c`` at height ``z``.
    """
    if f_height.ndim != 4 or f_height.shape[3] != Y * X:
        raise DimensionError(f"last extent of {f_height.shape} is not Y*X = {Y * X}")
    if params.direction != "h":
        raise ValueError("height attention runs along Z (dir='h')")
    B, C, Z, _ = f_height.shape
    out, back = da_forward_vjp(f_height, params)

    def vjp(g):
        return back(g.reshape(B, C, Z, Y * X))

    return out.reshape(B, C * Z, Y, X), vjp


def dha_forward(f_height, params, Y, X) -> np.ndarray:
    return dha_forward_vjp(f_height, params, Y, X)[0]


def unpack_height_channels(f_height_out: np.ndarray, Z: int) -> np.ndarray:
    """Inverse of the Z-into-channel stacking: ``[B, C*Z, Y, X] -> [B, C, Z, Y, X]``."""
    B, CZ, Y, X = f_height_out.shape
    if CZ % Z:
        raise DimensionError(f"{CZ} channels not divisible by Z={Z}")
    return f_height_out.reshape(B, CZ // Z, Z, Y, X)
