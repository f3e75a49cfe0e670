"""Differentiable primitives with hand-written backward passes.

Every ``*_vjp`` function returns ``(output, vjp)`` where ``vjp(cotangent)``
maps the output cotangent to the cotangents of the array inputs, in argument
order.  The plain-named functions are forward-only conveniences.

Layout is row-major throughout.  Kernels are applied as correlations: tap
``k`` multiplies the input at offset ``+k``.
"""
from __future__ import annotations

import numpy as np

from .tensor import DimensionError, NumericError


def _check_rank(name, x, rank):
    if x.ndim != rank:
        raise DimensionError(f"{name} expects rank {rank}, got shape {x.shape}")


# -- depthwise valid correlation -------------------------------------------

def depthwise_conv_axis_vjp(x, kernel, axis):
    """Valid per-(batch, channel) correlation along ``axis`` of ``x``.

    ``x`` is ``[B, C, ...]`` and ``kernel`` is ``[B, C, K]``; the kernel is shared
    across every axis other than ``axis``.  The output extent along ``axis`` is
    ``L - K + 1``.
    """
    axis = axis % x.ndim
    if axis < 2:
        raise DimensionError("cannot correlate along batch or channel axis")
    if kernel.ndim != 3 or kernel.shape[:2] != x.shape[:2]:
        raise DimensionError(f"kernel {kernel.shape} does not match input {x.shape}")
    L, K = x.shape[axis], kernel.shape[2]
    if K > L:
        raise DimensionError(f"kernel length {K} exceeds input length {L}")
    J = L - K + 1
    xm = np.moveaxis(x, axis, -1)
    kshape = kernel.shape[:2] + (1,) * (x.ndim - 3)
    out = np.zeros(xm.shape[:-1] + (J,))
    for k in range(K):
        out += xm[..., k:k + J] * kernel[:, :, k].reshape(kshape + (1,))

    def vjp(g):
        gm = np.moveaxis(g, axis, -1)
        gx = np.zeros_like(xm)
        gk = np.empty_like(kernel)
        red = tuple(range(2, gm.ndim))
        for k in range(K):
            gx[..., k:k + J] += gm * kernel[:, :, k].reshape(kshape + (1,))
            gk[:, :, k] = (gm * xm[..., k:k + J]).sum(axis=red)
        return np.moveaxis(gx, -1, axis), gk

    return np.moveaxis(out, -1, axis), vjp


def conv1d_depthwise_vjp(x, kernel):
    _check_rank("conv1d_depthwise", x, 3)
    return depthwise_conv_axis_vjp(x, kernel, 2)


def conv1d_depthwise(x, kernel):
    """``out[b, c, j] = sum_k x[b, c, j + k] * kernel[b, c, k]``."""
    return conv1d_depthwise_vjp(x, kernel)[0]


# -- MLP ----------------------------------------------------------------------

def mlp_vjp(x, layers):
    """Affine layers ``(W, b)`` with ``W`` of shape ``(in, out)``, ReLU between.

    The vjp returns ``(gx, [(gW, gb), ...])``.
    """
    _check_rank("mlp", x, 2)
    acts = [x]
    pre = []
    h = x
    for i, (W, b) in enumerate(layers):
        if W.shape[0] != h.shape[1] or b.shape != (W.shape[1],):
            raise DimensionError(f"layer {i}: weight {W.shape}/bias {b.shape} vs input width {h.shape[1]}")
        z = h @ W + b
        if i < len(layers) - 1:
            pre.append(z)
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            h = z

    def vjp(g):
        grads = [None] * len(layers)
        for i in range(len(layers) - 1, -1, -1):
            W, _ = layers[i]
            grads[i] = (acts[i].T @ g, g.sum(axis=0))
            g = g @ W.T
            if i > 0:
                g = g * (pre[i - 1] > 0.0)
        return g, grads

    return h, vjp


def mlp_forward(x, layers):
    return mlp_vjp(x, layers)[0]


# -- softmax / pooling / relu -------------------------------------------------

def softmax_vjp(x, axis=-1):
    if not np.all(np.isfinite(x)):
        raise NumericError("softmax input contains non-finite values")
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return y * (g - (g * y).sum(axis=axis, keepdims=True))

    return y, vjp


def softmax(x, axis=-1):
    return softmax_vjp(x, axis)[0]


def avgpool_axis_vjp(x, axis):
    n = x.shape[axis]
    out = x.mean(axis=axis, keepdims=True)

    def vjp(g):
        return np.broadcast_to(g / n, x.shape).copy()

    return out, vjp


def avgpool_axis(x, axis):
    """Arithmetic mean along ``axis``; that axis is kept with extent 1."""
    return avgpool_axis_vjp(x, axis)[0]


def relu_vjp(x):
    mask = x > 0.0
    return np.where(mask, x, 0.0), lambda g: g * mask


# -- 2D convolution -------------------------------------------------------------

def conv2d_vjp(x, w, b, stride=1, padding=0):
    """Dense 2D correlation. ``x [N,Ci,H,W]``, ``w [Co,Ci,kh,kw]``, ``b [Co]``."""
    _check_rank("conv2d", x, 4)
    N, Ci, H, W = x.shape
    Co, Ci2, kh, kw = w.shape
    if Ci2 != Ci:
        raise DimensionError(f"conv2d: weight expects {Ci2} channels, input has {Ci}")
    s, p = stride, padding
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    Ho = (H + 2 * p - kh) // s + 1
    Wo = (W + 2 * p - kw) // s + 1
    # accumulate in (Co, N, Ho, Wo) then transpose once
    acc = np.zeros((Co, N, Ho, Wo))
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, :, i:i + s * (Ho - 1) + 1:s, j:j + s * (Wo - 1) + 1:s]
            acc += np.tensordot(w[:, :, i, j], xs, axes=([1], [1]))
    out = acc.transpose(1, 0, 2, 3) + b.reshape(1, Co, 1, 1)

    def vjp(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(w)
        for i in range(kh):
            for j in range(kw):
                xs = xp[:, :, i:i + s * (Ho - 1) + 1:s, j:j + s * (Wo - 1) + 1:s]
                gw[:, :, i, j] = np.tensordot(g, xs, axes=([0, 2, 3], [0, 2, 3]))
                gxp[:, :, i:i + s * (Ho - 1) + 1:s, j:j + s * (Wo - 1) + 1:s] += np.tensordot(
                    w[:, :, i, j], g, axes=([0], [1])).transpose(1, 0, 2, 3)
        gx = gxp[:, :, p:p + H, p:p + W] if p else gxp
        return gx, gw, g.sum(axis=(0, 2, 3))

    return out, vjp


def conv2d(x, w, b, stride=1, padding=0):
    return conv2d_vjp(x, w, b, stride, padding)[0]


# -- bilinear resize --------------------------------------------------------------

def interp_matrix(n_in, n_out):
    """Row-stochastic ``(n_out, n_in)`` linear-interpolation matrix, half-pixel centers."""
    M = np.zeros((n_out, n_in))
    if n_in == n_out:
        np.fill_diagonal(M, 1.0)
        return M
    scale = n_in / n_out
    for o in range(n_out):
        src = min(max((o + 0.5) * scale - 0.5, 0.0), n_in - 1)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        f = src - i0
        M[o, i0] += 1.0 - f
        M[o, i1] += f
    return M


def bilinear_resize_vjp(x, out_hw):
    """Resize the last two axes of ``x`` to ``out_hw`` (align_corners=False)."""
    H, W = x.shape[-2:]
    Ho, Wo = out_hw
    if (H, W) == (Ho, Wo):
        return x, lambda g: g
    Ry = interp_matrix(H, Ho)
    Rx = interp_matrix(W, Wo)
    out = Ry @ x @ Rx.T

    def vjp(g):
        return Ry.T @ g @ Rx

    return out, vjp


def bilinear_resize(x, out_hw):
    return bilinear_resize_vjp(x, out_hw)[0]
