"""Bias-corrected Adam acting on :class:`ParamTensor` moment buffers."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import UsageError
from .tensor import ParamTensor


def adam_step(params: Sequence[ParamTensor], lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Apply one Adam update in place. Gradients are left for the caller to reset."""
    missing = [p.name or repr(p) for p in params if p.grad is None]
    if missing:
        raise UsageError(f"adam_step: no gradient for {', '.join(missing)}")
    for p in params:
        g = p.grad
        p.step_count += 1
        t = p.step_count
        p.adam_m *= beta1
        p.adam_m += (1 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1 - beta2) * (g * g)
        m_hat = p.adam_m / (1 - beta1 ** t)
        v_hat = p.adam_v / (1 - beta2 ** t)
        update = lr * m_hat / (np.sqrt(v_hat) + eps)
        p.data -= update.astype(p.dtype, copy=False)
