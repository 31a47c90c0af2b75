"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    passed: bool
    per_input: list[float] = field(default_factory=list)


def grad_check(f, inputs, step: float = 1e-5, tol: float = 1e-6) -> GradCheckReport:
    """Compare backward() gradients of a scalar-valued f against central differences.

    `inputs` is a Tensor or list of Tensors; they are promoted to float64 and
    marked requires_grad.  The relative error per coordinate is
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    inputs = [Tensor(t.data.astype(np.float64), requires_grad=True) for t in inputs]

    out = f(*inputs)
    if out.data.size != 1:
        raise ValueError("grad_check requires a scalar-valued function")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    def value() -> float:
        return float(f(*[Tensor(t.data) for t in inputs]).data)

    per_input: list[float] = []
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        worst = 0.0
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up = value()
            flat[idx] = orig - step
            down = value()
            flat[idx] = orig
            numeric = (up - down) / (2.0 * step)
            ai = a.reshape(-1)[idx]
            rel = abs(ai - numeric) / max(1.0, abs(ai), abs(numeric))
            worst = max(worst, rel)
        per_input.append(worst)
    max_rel = max(per_input) if per_input else 0.0
    return GradCheckReport(max_rel_err=max_rel, tol=tol, passed=max_rel <= tol, per_input=per_input)
