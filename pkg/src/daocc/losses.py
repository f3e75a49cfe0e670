"""Training objectives: score BCE, voxel cross-entropy and scene-class affinity terms.

Each ``*_vjp`` returns ``(value, vjp)`` where ``vjp()`` gives the gradient
with respect to the first array argument.  A term with nothing to average
over evaluates to 0 and its vjp returns zeros.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ops import softmax_vjp
from .tensor import NumericError

PROB_EPS = 1e-7
LOG_FLOOR = 1e-12


def bce_scores_vjp(probs, target, valid):
    """Binary cross-entropy between per-pixel bin probabilities and one-hot targets.

    ``probs`` / ``target`` are ``(N, D, H, W)``; ``valid`` is ``(N, H, W)``.
    Averaged over valid pixels and all ``D`` bins.
    """
    valid = np.asarray(valid, dtype=bool)
    n = int(valid.sum()) * probs.shape[1]
    if n == 0:
        return 0.0, lambda: np.zeros_like(probs)
    # clip each log argument separately so exact one-hot predictions give exactly 0
    p = np.maximum(probs, PROB_EPS)
    q = np.maximum(1.0 - probs, PROB_EPS)
    m = valid[:, None].astype(np.float64)
    elem = -(target * np.log(p) + (1.0 - target) * np.log(q))
    value = float((elem * m).sum() / n)

    def vjp():
        gp = np.where(probs > PROB_EPS, -target / p, 0.0)
        gq = np.where(1.0 - probs > PROB_EPS, (1.0 - target) / q, 0.0)
        return m * (gp + gq) / n

    return value, vjp


def cross_entropy_vjp(logits, labels, mask=None):
    """Mean voxel cross-entropy; ``logits (B, K, ...)``, integer ``labels (B, ...)``."""
    K = logits.shape[1]
    lg = np.moveaxis(logits, 1, -1).reshape(-1, K)
    lab = np.asarray(labels).reshape(-1).astype(np.int64)
    keep = np.ones(len(lab), dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(-1)
    n = int(keep.sum())
    if n == 0:
        return 0.0, lambda: np.zeros_like(logits)
    mx = lg.max(axis=1, keepdims=True)
    lse = np.log(np.exp(lg - mx).sum(axis=1)) + mx[:, 0]
    nll = lse - lg[np.arange(len(lab)), lab]
    value = float(nll[keep].sum() / n)

    def vjp():
        p = np.exp(lg - lse[:, None])
        p[np.arange(len(lab)), lab] -= 1.0
        p *= keep[:, None] / n
        return np.moveaxis(p.reshape(np.moveaxis(logits, 1, -1).shape), -1, 1)

    return value, vjp


def _affinity(p, g):
    """``-(log P + log R + log S)`` per row of ``p``/``g`` ``(K, V)``, with gradient.

    P = sum(p g)/sum(p), R = sum(p g)/sum(g), S = sum((1-p)(1-g))/sum(1-g).
    Rows with ``sum(g) == 0`` are skipped; S is skipped when ``sum(1-g) == 0``.
    Returns ``(mean loss over used rows, d loss / d p, used-row flags)``.
    """
    sg = g.sum(axis=1)
    used = sg > 0
    gp = np.zeros_like(p)
    if not used.any():
        return 0.0, gp, used
    nom = (p * g).sum(axis=1)
    sp = p.sum(axis=1)
    neg = (1.0 - g)
    sn = neg.sum(axis=1)
    snum = ((1.0 - p) * neg).sum(axis=1)
    nu = used.sum()
    total = 0.0
    for k in np.nonzero(used)[0]:
        P = nom[k] / sp[k]
        R = nom[k] / sg[k]
        total -= np.log(max(P, LOG_FLOOR)) + np.log(max(R, LOG_FLOOR))
        # d(-log P)/dp = -(g/nom - 1/sp); d(-log R)/dp = -g/nom
        gk = -(g[k] / nom[k]) + 1.0 / sp[k] - g[k] / nom[k] if nom[k] > 0 else np.full(p.shape[1], 1.0 / sp[k])
        if sn[k] > 0:
            S = snum[k] / sn[k]
            total -= np.log(max(S, LOG_FLOOR))
            if snum[k] > 0:
                gk = gk + neg[k] / snum[k]
        gp[k] = gk / nu
    return float(total / nu), gp, used


def scal_sem_vjp(logits, labels, mask=None):
    """Semantic scene-class affinity loss over every class present in ``labels``."""
    K = logits.shape[1]
    probs, sm_back = softmax_vjp(logits, axis=1)
    p = np.moveaxis(probs, 1, 0).reshape(K, -1)
    lab = np.asarray(labels).reshape(-1)
    keep = np.ones(lab.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(-1)
    g = (lab[None, :] == np.arange(K)[:, None]).astype(np.float64)
    value, gp, _ = _affinity(p[:, keep], g[:, keep])

    def vjp():
        full = np.zeros_like(p)
        full[:, keep] = gp
        gprobs = np.moveaxis(full.reshape((K,) + probs.shape[:1] + probs.shape[2:]), 0, 1)
        return sm_back(gprobs)

    return value, vjp


def scal_geo_vjp(logits, labels, mask=None, empty_class: int = 0):
    """Geometric affinity loss on the occupied-vs-empty collapse (occupied class only)."""
    probs, sm_back = softmax_vjp(logits, axis=1)
    occ = 1.0 - probs[:, empty_class]
    lab = np.asarray(labels)
    keep = np.ones(lab.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    p = occ[keep][None]
    g = (lab[keep] != empty_class).astype(np.float64)[None]
    value, gp, _ = _affinity(p, g)

    def vjp():
        gocc = np.zeros_like(occ)
        gocc[keep] = gp[0]
        gprobs = np.zeros_like(probs)
        gprobs[:, empty_class] = -gocc
        return sm_back(gprobs)

    return value, vjp


TERMS = ("depth", "height", "ce", "sem", "geo")


@dataclass
class LossBreakdown:
    raw: dict = field(default_factory=dict)
    weighted: dict = field(default_factory=dict)
    empty: list = field(default_factory=list)  # terms that had nothing to average
    total: float = 0.0

    def as_text(self) -> str:
        parts = [f"{k}={self.raw[k]:.6g}(x{self.weighted[k] / self.raw[k] if self.raw[k] else 0:g})" for k in TERMS]
        return f"total={self.total:.6g} " + " ".join(parts)


def _guard(term_vjp, *args):
    """Evaluate one term; non-finite inputs give a NaN value so the breakdown can still be reported."""
    try:
        return term_vjp(*args)
    except NumericError:
        return float("nan"), None


def total_loss_vjp(depth_score, height_score, logits, targets, weights=(1.0, 1.0, 10.0, 1.0, 1.0),
                   use_mask: bool = True, empty_class: int = 0):
    """Weighted sum of the five terms.

    ``targets`` needs ``depth_onehot``, ``depth_valid``, ``height_onehot``,
    ``height_valid``, ``labels`` (``(B, Z, Y, X)``) and optionally ``mask``.
    The vjp returns gradients for ``(depth_score, height_score, logits)``.
    """
    mask = targets.get("mask") if use_mask else None
    labels = targets["labels"]
    terms = {
        "depth": _guard(bce_scores_vjp, depth_score, targets["depth_onehot"], targets["depth_valid"]),
        "height": _guard(bce_scores_vjp, height_score, targets["height_onehot"], targets["height_valid"]),
        "ce": _guard(cross_entropy_vjp, logits, labels, mask),
        "sem": _guard(scal_sem_vjp, logits, labels, mask),
        "geo": _guard(scal_geo_vjp, logits, labels, mask, empty_class),
    }
    lam = dict(zip(TERMS, weights))
    out = LossBreakdown()
    for k in TERMS:
        v = terms[k][0]
        out.raw[k] = v
        out.weighted[k] = lam[k] * v
    out.total = float(sum(out.weighted[k] for k in TERMS))
    valid_vox = labels.size if mask is None else int(np.sum(mask))
    if not np.any(targets["depth_valid"]):
        out.empty.append("depth")
    if not np.any(targets["height_valid"]):
        out.empty.append("height")
    if valid_vox == 0:
        out.empty += ["ce", "sem", "geo"]

    def vjp():
        gd = lam["depth"] * terms["depth"][1]()
        gh = lam["height"] * terms["height"][1]()
        gl = lam["ce"] * terms["ce"][1]() + lam["sem"] * terms["sem"][1]() + lam["geo"] * terms["geo"][1]()
        return gd, gh, gl

    return out, vjp
