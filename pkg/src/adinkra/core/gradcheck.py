"""Central-difference gradient oracle."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import PreconditionError
from .tensor import GradientTape, Tensor, _active_tapes


@dataclass
class GradCheckReport:
    errors: list[float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors)


def _eval_untaped(fn, inputs) -> float:
    saved = list(_active_tapes)
    _active_tapes.clear()
    try:
        out = fn(*inputs)
    finally:
        _active_tapes.extend(saved)
    data = out.data if isinstance(out, Tensor) else np.asarray(out)
    return float(data.reshape(-1)[0])


def numerical_grad(fn: Callable, inputs: Sequence[Tensor], t: Tensor, h: float) -> np.ndarray:
    flat = t.data.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = _eval_untaped(fn, inputs)
        flat[i] = orig - h
        fm = _eval_untaped(fn, inputs)
        flat[i] = orig
        out[i] = (fp - fm) / (2 * h)
    return out.reshape(t.shape)


def grad_check(fn: Callable, inputs: Sequence[Tensor], tolerance: float = 1e-5,
               h: float = 1e-5, max_elements: int = 1000) -> GradCheckReport:
    """Compare analytic gradients of scalar ``fn(*inputs)`` with central differences.

    The error reported per input is ``max|analytic - numeric|`` divided by the
    larger of the two gradients' max-abs values, so it is relative to the
    scale of that tensor's gradient rather than to individual entries that
    happen to be near zero.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise PreconditionError("grad_check requires float64 inputs (verification mode)")
    total = sum(t.size for t in inputs)
    if total > max_elements:
        raise PreconditionError(f"grad_check on {total} elements exceeds max_elements={max_elements}")

    flags = [t.requires_grad for t in inputs]
    grads = [t.grad for t in inputs]
    try:
        for t in inputs:
            t.requires_grad = True
            t.grad = None
        with GradientTape() as tape:
            out = fn(*inputs)
        if not isinstance(out, Tensor) or out.size != 1:
            raise PreconditionError("grad_check needs a scalar-valued function")
        tape.backward(out)
        analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]
    finally:
        for t, f, g in zip(inputs, flags, grads):
            t.requires_grad = f
            t.grad = g

    errors = []
    for t, a in zip(inputs, analytic):
        n = numerical_grad(fn, inputs, t, h)
        scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
        diff = np.abs(a - n).max(initial=0.0)
        errors.append(0.0 if scale == 0 else float(diff / scale))
    return GradCheckReport(errors, tolerance)
