"""Forward operations with exact reverse-mode gradient rules.

All ops take :class:`Tensor` (or anything array-like) and keep the floating
dtype of their inputs, so a float64 network stays float64 end to end.
"""

from __future__ import annotations

import numpy as np

from ..errors import PreconditionError, UnsupportedConfigurationError
from .tensor import Tensor, ensure_tensor, record_op

KERNEL = 3


def _conv_out(n: int, pad: int, stride: int) -> int:
    return (n + 2 * pad - KERNEL) // stride + 1


def _check_conv(x: np.ndarray, w: np.ndarray, b: np.ndarray, pad: int, stride: int):
    if w.ndim != 4 or w.shape[2:] != (KERNEL, KERNEL):
        raise UnsupportedConfigurationError(f"only 3x3 kernels are supported, got {w.shape}")
    if x.ndim != 4:
        raise PreconditionError(f"conv2d expects N,C,H,W input, got {x.shape}")
    if x.shape[1] != w.shape[1]:
        raise PreconditionError(
            f"input has {x.shape[1]} channels but weight expects {w.shape[1]}")
    if b.shape != (w.shape[0],):
        raise PreconditionError(f"bias shape {b.shape} does not match {w.shape[0]} filters")
    if pad not in (0, 1):
        raise UnsupportedConfigurationError(f"pad must be 0 or 1, got {pad}")
    if stride < 1:
        raise UnsupportedConfigurationError(f"stride must be >= 1, got {stride}")
    if _conv_out(x.shape[2], pad, stride) < 1 or _conv_out(x.shape[3], pad, stride) < 1:
        raise PreconditionError(f"input {x.shape[2:]} too small for a 3x3 kernel at pad {pad}")


def _nhwc(x: np.ndarray) -> np.ndarray:
    # no copy when the NCHW array is a view over channels-last memory
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1))


def im2col(x: np.ndarray, pad: int, stride: int) -> np.ndarray:
    """Unroll 3x3 patches of an N,C,H,W array into rows of shape (N*H'*W', 9*C).

    Columns are ordered (u, v, c) so each patch row is nine contiguous
    channel runs.
    """
    xh = _nhwc(x)
    n, h, w, c = xh.shape
    ho, wo = _conv_out(h, pad, stride), _conv_out(w, pad, stride)
    if pad:
        xp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=x.dtype)
        xp[:, pad:pad + h, pad:pad + w] = xh
    else:
        xp = xh
    cols = np.empty((n, ho, wo, KERNEL * KERNEL, c), dtype=x.dtype)
    for u in range(KERNEL):
        for v in range(KERNEL):
            cols[:, :, :, u * KERNEL + v] = xp[:, u:u + stride * ho:stride, v:v + stride * wo:stride]
    return cols.reshape(n * ho * wo, KERNEL * KERNEL * c)


def col2im(dcols: np.ndarray, x_shape, pad: int, stride: int) -> np.ndarray:
    """Adjoint of :func:`im2col`; returns an N,C,H,W view over channels-last memory."""
    n, c, h, w = x_shape
    ho, wo = _conv_out(h, pad, stride), _conv_out(w, pad, stride)
    d = dcols.reshape(n, ho, wo, KERNEL * KERNEL, c)
    dxp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=dcols.dtype)
    for u in range(KERNEL):
        for v in range(KERNEL):
            dxp[:, u:u + stride * ho:stride, v:v + stride * wo:stride] += d[:, :, :, u * KERNEL + v]
    return dxp[:, pad:pad + h, pad:pad + w].transpose(0, 3, 1, 2)


def _weight_matrix(w: np.ndarray) -> np.ndarray:
    # (Cout, C, 3, 3) -> (Cout, 9*C) matching the (u, v, c) column order
    return np.ascontiguousarray(w.transpose(0, 2, 3, 1)).reshape(w.shape[0], -1)


def conv2d(x, weight, bias, pad: int = 1, stride: int = 1) -> Tensor:
    """3x3 cross-correlation with zero padding, realised as im2col + GEMM."""
    x, weight, bias = ensure_tensor(x), ensure_tensor(weight), ensure_tensor(bias)
    xd, wd, bd = x.data, weight.data, bias.data
    _check_conv(xd, wd, bd, pad, stride)
    n = xd.shape[0]
    cout = wd.shape[0]
    ho, wo = _conv_out(xd.shape[2], pad, stride), _conv_out(xd.shape[3], pad, stride)

    cols = im2col(xd, pad, stride)
    wmat = _weight_matrix(wd)
    out = cols @ wmat.T
    out += bd
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)

    def backward(g, needs):
        gmat = _nhwc(g).reshape(-1, cout)
        dx = col2im(gmat @ wmat, xd.shape, pad, stride) if needs[0] else None
        dw = None
        if needs[1]:
            dw = (gmat.T @ cols).reshape(cout, KERNEL, KERNEL, -1).transpose(0, 3, 1, 2)
        db = gmat.sum(axis=0) if needs[2] else None
        return dx, dw, db

    return record_op("conv2d", (x, weight, bias), out, backward)


def conv2d_reference(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
                     pad: int = 1, stride: int = 1) -> np.ndarray:
    """Direct nested-loop convolution. Slow; used as a test oracle only."""
    x, weight, bias = np.asarray(x), np.asarray(weight), np.asarray(bias)
    _check_conv(x, weight, bias, pad, stride)
    n, c, h, w = x.shape
    cout = weight.shape[0]
    ho, wo = _conv_out(h, pad, stride), _conv_out(w, pad, stride)
    out = np.zeros((n, cout, ho, wo), dtype=np.result_type(x, weight))
    for b in range(n):
        for k in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = bias[k]
                    for ch in range(c):
                        for u in range(KERNEL):
                            for v in range(KERNEL):
                                r = i * stride + u - pad
                                s = j * stride + v - pad
                                if 0 <= r < h and 0 <= s < w:
                                    acc = acc + x[b, ch, r, s] * weight[k, ch, u, v]
                    out[b, k, i, j] = acc
    return out


def relu(x) -> Tensor:
    x = ensure_tensor(x)
    xd = x.data
    mask = xd > 0
    out = np.maximum(xd, 0, dtype=xd.dtype)

    def backward(g, needs):
        return (g * mask,)

    return record_op("relu", (x,), out, backward)


def tanh(x) -> Tensor:
    x = ensure_tensor(x)
    out = np.tanh(x.data)

    def backward(g, needs):
        return (g * (1 - out * out),)

    return record_op("tanh", (x,), out, backward)


def maxpool2(x) -> Tensor:
    """Non-overlapping 2x2 max pooling; ties route to the first window element."""
    x = ensure_tensor(x)
    xd = x.data
    if xd.ndim != 4:
        raise PreconditionError(f"maxpool2 expects N,C,H,W input, got {xd.shape}")
    n, c, h, w = xd.shape
    if h % 2 or w % 2:
        raise PreconditionError(f"maxpool2 needs even H and W, got {h}x{w}")
    win = _nhwc(xd).reshape(n, h // 2, 2, w // 2, 2, c)
    # row-major window order: (0,0), (0,1), (1,0), (1,1)
    corners = [win[:, :, 0, :, 0], win[:, :, 0, :, 1], win[:, :, 1, :, 0], win[:, :, 1, :, 1]]
    out = corners[0].copy()
    arg = np.zeros(out.shape, dtype=np.int8)
    for k in range(1, 4):
        better = corners[k] > out
        np.copyto(out, corners[k], where=better)
        arg[better] = k

    def backward(g, needs):
        gh = _nhwc(g)
        dwin = np.zeros((n, h // 2, 2, w // 2, 2, c), dtype=g.dtype)
        for k in range(4):
            dwin[:, :, k // 2, :, k % 2] = np.where(arg == k, gh, 0)
        return (dwin.reshape(n, h, w, c).transpose(0, 3, 1, 2),)

    return record_op("maxpool2", (x,), out.transpose(0, 3, 1, 2), backward)


def linear(x, weight, bias) -> Tensor:
    """``x @ weight + bias`` with weight stored as (in, out)."""
    x, weight, bias = ensure_tensor(x), ensure_tensor(weight), ensure_tensor(bias)
    xd, wd, bd = x.data, weight.data, bias.data
    if xd.ndim != 2 or wd.ndim != 2 or xd.shape[1] != wd.shape[0]:
        raise PreconditionError(f"linear: cannot multiply {xd.shape} by {wd.shape}")
    if bd.shape != (wd.shape[1],):
        raise PreconditionError(f"linear: bias {bd.shape} does not match width {wd.shape[1]}")
    out = xd @ wd
    out += bd

    def backward(g, needs):
        dx = g @ wd.T if needs[0] else None
        dw = xd.T @ g if needs[1] else None
        db = g.sum(axis=0) if needs[2] else None
        return dx, dw, db

    return record_op("linear", (x, weight, bias), out, backward)


def dropout(x, p: float, training: bool, seed: int) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) so inference is identity."""
    if not 0 <= p < 1:
        raise PreconditionError(f"dropout probability must be in [0, 1), got {p}")
    x = ensure_tensor(x)
    if not training or p == 0:
        return x
    keep = np.random.default_rng(seed).random(x.shape) >= p
    mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - p))
    out = x.data * mask

    def backward(g, needs):
        return (g * mask,)

    return record_op("dropout", (x,), out, backward)


def reshape(x, shape) -> Tensor:
    x = ensure_tensor(x)
    src = x.shape
    out = x.data.reshape(shape)

    def backward(g, needs):
        return (g.reshape(src),)

    return record_op("reshape", (x,), out, backward)


def flatten(x) -> Tensor:
    x = ensure_tensor(x)
    return reshape(x, (x.shape[0], -1))


def sum_all(x) -> Tensor:
    x = ensure_tensor(x)
    out = np.asarray(x.data.sum(), dtype=x.dtype)

    def backward(g, needs):
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return record_op("sum", (x,), out, backward)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, targets) -> Tensor:
    """Mean categorical cross-entropy of integer targets under softmax(logits).

    The returned scalar carries the softmax probabilities as ``.probs``.
    """
    logits = ensure_tensor(logits)
    z = logits.data
    if z.ndim != 2:
        raise PreconditionError(f"logits must be N,C, got {z.shape}")
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    n, c = z.shape
    if t.shape[0] != n:
        raise PreconditionError(f"{t.shape[0]} targets for {n} rows of logits")
    if t.size and (t.min() < 0 or t.max() >= c):
        raise PreconditionError(f"targets must lie in [0, {c})")
    logp = log_softmax(z)
    rows = np.arange(n)
    loss = np.asarray(-logp[rows, t].mean(), dtype=z.dtype)
    probs = np.exp(logp)

    def backward(g, needs):
        d = probs.copy()
        d[rows, t] -= 1
        return (d * (g / n),)

    out = record_op("softmax_cross_entropy", (logits,), loss, backward)
    out.probs = probs
    return out
