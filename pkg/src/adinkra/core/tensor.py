"""Tensor, trainable parameters and the reverse-mode gradient tape.

Operations record themselves on the innermost active :class:`GradientTape`.
Outside any tape nothing is recorded, which is how inference runs without
keeping intermediates alive.

A node refers to its output tensor and its tape only weakly. Tensors point at
the node that produced them and the tape owns its nodes, so strong links in
the other direction would form cycles, and every step's activations would
wait for the cycle collector instead of being freed when the tape goes away.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import PreconditionError, UsageError

DEFAULT_DTYPE = np.float32

_active_tapes: list["GradientTape"] = []


def as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(DEFAULT_DTYPE)
    return arr


class Tensor:
    """Dense n-d array with an optional gradient buffer."""

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        self.data = as_array(data, dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._node: Optional[Node] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        g = np.asarray(g, dtype=self.data.dtype).reshape(self.data.shape)
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"


class ParamTensor(Tensor):
    """A trainable tensor carrying its own Adam moment buffers."""

    def __init__(self, data, dtype=None, name: str = ""):
        super().__init__(data, dtype=dtype, requires_grad=True)
        self.name = name
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step_count = 0

    @property
    def value(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"ParamTensor({self.name!r}, shape={self.shape}, dtype={self.dtype})"


# backward(grad_out, needs) -> one gradient (or None) per input
BackwardFn = Callable[[np.ndarray, Sequence[bool]], Sequence[Optional[np.ndarray]]]


@dataclass(eq=False)
class Node:
    name: str
    inputs: tuple[Tensor, ...]
    output_ref: weakref.ref
    backward: BackwardFn
    tape_ref: weakref.ref

    @property
    def output(self) -> Optional[Tensor]:
        return self.output_ref()

    @property
    def tape(self) -> Optional["GradientTape"]:
        return self.tape_ref()


@dataclass(eq=False)
class GradientTape:
    """Ordered record of operations, replayed in reverse by :meth:`backward`.

    Usable as a context manager; nested tapes shadow outer ones.
    """

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> "GradientTape":
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _active_tapes.pop()
        assert popped is self

    def record(self, name, inputs, output, backward) -> Node:
        node = Node(name, tuple(inputs), weakref.ref(output), backward, weakref.ref(self))
        self.nodes.append(node)
        output._node = node
        return node

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)

    def reset(self) -> None:
        for node in self.nodes:
            out = node.output
            if out is not None:
                out._node = None
        self.nodes.clear()


def current_tape() -> Optional[GradientTape]:
    return _active_tapes[-1] if _active_tapes else None


def _tracked(t: Tensor, tape: GradientTape) -> bool:
    return t.requires_grad or (t._node is not None and t._node.tape is tape)


def record_op(name: str, inputs: Sequence[Tensor], out_data: np.ndarray,
              backward_fn: BackwardFn) -> Tensor:
    out = Tensor(out_data)
    tape = current_tape()
    if tape is not None and any(_tracked(t, tape) for t in inputs):
        tape.record(name, inputs, out, backward_fn)
    return out


def backward(tape: GradientTape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into ``.grad`` of every reachable leaf.

    Gradients add onto existing ``.grad`` buffers; callers reset them
    between optimisation steps.
    """
    if loss.data.size != 1:
        raise PreconditionError(f"loss must be a scalar, got shape {loss.shape}")
    node = loss._node
    if node is None or node.tape is not tape:
        raise UsageError("loss was not produced under this tape")
    stop = tape.nodes.index(node)

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes[: stop + 1]):
        out = node.output
        # an output nobody holds any more cannot have received a gradient
        g = None if out is None else pending.pop(id(out), None)
        if g is None:
            continue
        needs = [_tracked(t, tape) for t in node.inputs]
        in_grads = node.backward(g, needs)
        for t, need, gi in zip(node.inputs, needs, in_grads):
            if not need or gi is None:
                continue
            if t._node is not None and t._node.tape is tape:
                key = id(t)
                if key in pending:
                    pending[key] = pending[key] + gi
                else:
                    pending[key] = gi
            elif t.requires_grad:
                t.accumulate_grad(gi)


def zero_grad(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


def ensure_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)
