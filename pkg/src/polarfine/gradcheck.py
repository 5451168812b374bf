"""Finite-difference validation of analytic gradients.

Central differences with a configurable step; relative error against the
analytic value with an absolute floor so near-zero pairs compare sanely.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffcore import Tensor, backward


@dataclass
class GradCheckEntry:
    input_index: int
    flat_index: int
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.max_rel_err < self.tol

    def worst(self) -> GradCheckEntry | None:
        if not self.entries:
            return None
        return max(self.entries, key=lambda e: e.rel_err)

    def __str__(self):
        status = "ok" if self.ok else "FAIL"
        head = f"gradcheck {status}: max rel err {self.max_rel_err:.3e} (tol {self.tol:.0e})"
        bad = self.worst()
        if bad is not None and not self.ok:
            head += (f"; worst input {bad.input_index}[{bad.flat_index}]"
                     f" analytic {bad.analytic:.6e} numeric {bad.numeric:.6e}")
        return head


def _rel_err(a: float, f: float, floor: float = 1e-2) -> float:
    # Floored denominator, as in the usual atol+rtol gradcheck convention:
    # a pure ratio explodes on near-zero gradients where the central
    # difference is dominated by roundoff and kink straddle.
    return abs(a - f) / max(abs(a), abs(f), floor)


def spot_check(fn, tensors: list[Tensor], h: float = 1e-5, tol: float = 1e-4,
               per_tensor: int = 2, seed: int = 0) -> GradCheckReport:
    """grad_check for large graphs: probe a random sample of coordinates.

    Backward runs once for the analytic values; only the sampled
    coordinates pay the two extra forward passes of the central
    difference. fn must rebuild its graph from the given tensors on
    every call.
    """
    out = fn(*tensors)
    if out.data.size != 1:
        raise ValueError("spot_check needs a scalar objective")
    for t in tensors:
        t.zero_grad()
    backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in tensors]

    rng = np.random.default_rng(seed)
    entries: list[GradCheckEntry] = []
    worst = 0.0
    for ti, t in enumerate(tensors):
        flat = t.data.reshape(-1)
        take = min(per_tensor, flat.size)
        for i in rng.choice(flat.size, size=take, replace=False):
            i = int(i)
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(fn(*tensors).data)
            flat[i] = orig - h
            f_minus = float(fn(*tensors).data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(analytic[ti].reshape(-1)[i])
            err = _rel_err(a, numeric)
            entries.append(GradCheckEntry(ti, i, a, numeric, err))
            worst = max(worst, err)
    return GradCheckReport(max_rel_err=worst, tol=tol, entries=entries)


def grad_check(fn, inputs: list[Tensor], h: float = 1e-5,
               tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of scalar fn(*inputs) against central differences.

    fn must rebuild its graph from the given leaf tensors on every call;
    their data is perturbed in place and restored.
    """
    out = fn(*inputs)
    if out.data.size != 1:
        raise ValueError("grad_check needs a scalar objective")
    for t in inputs:
        t.zero_grad()
    backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in inputs]

    entries: list[GradCheckEntry] = []
    worst = 0.0
    for ti, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(fn(*inputs).data)
            flat[i] = orig - h
            f_minus = float(fn(*inputs).data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(analytic[ti].reshape(-1)[i])
            err = _rel_err(a, numeric)
            entries.append(GradCheckEntry(ti, i, a, numeric, err))
            worst = max(worst, err)

    return GradCheckReport(max_rel_err=worst, tol=tol, entries=entries)
