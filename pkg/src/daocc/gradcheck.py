"""Central-difference verification of hand-written backward passes."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GradcheckError(AssertionError):
    def __init__(self, report: "GradcheckReport"):
        self.report = report
        super().__init__(report.summary())


@dataclass
class InputReport:
    index: int
    name: str
    checked: int
    max_rel_error: float
    offending: list = field(default_factory=list)  # (coord, analytic, numeric, rel_err)


@dataclass
class GradcheckReport:
    tolerance: float
    epsilon: float
    inputs: list[InputReport]

    @property
    def passed(self) -> bool:
        return all(not r.offending for r in self.inputs)

    @property
    def max_rel_error(self) -> float:
        return max((r.max_rel_error for r in self.inputs), default=0.0)

    def summary(self) -> str:
        lines = [f"gradcheck eps={self.epsilon:g} tol={self.tolerance:g}: "
                 + ("PASS" if self.passed else "FAIL")]
        for r in self.inputs:
            lines.append(f"  [{r.index}] {r.name}: {r.checked} coords, max rel err {r.max_rel_error:.3e}")
            for coord, a, n, e in r.offending[:10]:
                lines.append(f"      at {coord}: analytic={a:.6e} numeric={n:.6e} rel={e:.3e}")
        return "\n".join(lines)


def rel_error(analytic, numeric, scale, floor=1e-10):
    """``|a - n| / max(|a|, |n|, 1e-3 * scale, floor)``.

    ``scale`` is the largest analytic magnitude for that input and ``floor``
    the round-off level of the difference quotient; both keep near-zero
    coordinates from being judged on pure round-off.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), max(1e-3 * scale, floor))
    return np.abs(analytic - numeric) / denom


def gradcheck(op, inputs, epsilon=1e-5, tolerance=1e-4, *, names=None, max_coords=None,
              seed=0, raise_on_failure=True) -> GradcheckReport:
    """Compare ``op``'s vjp against central differences of ``<u, op(inputs)>``.

    ``op(*inputs)`` must return ``(output, vjp)``; ``vjp(u)`` returns one
    cotangent per input.  ``u`` is a fixed random cotangent (1 for scalar
    outputs).  With ``max_coords`` set, a random subset of coordinates of each
    input is probed.
    """
    rng = np.random.default_rng(seed)
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    out, vjp = op(*inputs)
    out = np.asarray(out, dtype=np.float64)
    u = np.ones_like(out) if out.ndim == 0 else rng.standard_normal(out.shape)
    analytic = vjp(u if out.ndim else np.float64(1.0))
    if not isinstance(analytic, (tuple, list)):
        analytic = (analytic,)
    if len(analytic) != len(inputs):
        raise ValueError(f"vjp returned {len(analytic)} cotangents for {len(inputs)} inputs")

    def f(args):
        return float(np.sum(u * np.asarray(op(*args)[0])))

    # a central difference of f carries round-off of order |f| * eps_mach / epsilon
    floor = max(1e-10, 1e3 * abs(float(np.sum(u * out))) * np.finfo(np.float64).eps / epsilon)

    reports = []
    for idx, x in enumerate(inputs):
        a_full = np.asarray(analytic[idx], dtype=np.float64)
        if a_full.shape != x.shape:
            raise ValueError(f"cotangent {idx} shape {a_full.shape} != input shape {x.shape}")
        flat = np.arange(x.size)
        if max_coords is not None and x.size > max_coords:
            flat = np.sort(rng.choice(x.size, size=max_coords, replace=False))
        numeric = np.empty(len(flat))
        for n, k in enumerate(flat):
            coord = np.unravel_index(k, x.shape)
            orig = x[coord]
            args = list(inputs)
            xp = x.copy()
            xp[coord] = orig + epsilon
            args[idx] = xp
            fp = f(args)
            xp[coord] = orig - epsilon
            fm = f(args)
            numeric[n] = (fp - fm) / (2.0 * epsilon)
        a = a_full.reshape(-1)[flat]
        scale = float(np.max(np.abs(a_full))) if a_full.size else 0.0
        err = rel_error(a, numeric, scale, floor)
        bad = np.nonzero(err > tolerance)[0]
        offending = [(tuple(int(c) for c in np.unravel_index(flat[b], x.shape)), float(a[b]),
                      float(numeric[b]), float(err[b])) for b in bad]
        name = names[idx] if names else f"input{idx}"
        reports.append(InputReport(idx, name, len(flat), float(err.max()) if err.size else 0.0, offending))

    report = GradcheckReport(tolerance, epsilon, reports)
    if raise_on_failure and not report.passed:
        raise GradcheckError(report)
    return report
