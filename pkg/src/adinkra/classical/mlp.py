"""Fully connected classifier built on the tensor engine."""

from __future__ import annotations

import numpy as np

from ..core import (GradientTape, ParamTensor, adam_step, linear, relu, softmax_cross_entropy,
                    tanh, zero_grad)
from ..errors import PreconditionError
from .base import FeatureMatrix, check_fit_input

_ACTIVATIONS = {"relu": relu, "tanh": tanh}


class MLPClassifier:
    """Hidden layers with relu or tanh, softmax output, Adam on mini-batches.

    Weights use Glorot-uniform initialisation; every epoch visits the training
    rows in a fresh seeded order.
    """

    def __init__(self, hidden_layer_sizes=(100,), activation: str = "relu", max_iter: int = 200,
                 learning_rate_init: float = 1e-3, batch_size: int = 200, seed: int = 0,
                 dtype=np.float32):
        hidden = tuple(int(h) for h in np.atleast_1d(hidden_layer_sizes))
        if any(h < 1 for h in hidden):
            raise PreconditionError(f"hidden widths must be >= 1, got {hidden}")
        if activation not in _ACTIVATIONS:
            raise PreconditionError(f"unknown activation {activation!r}")
        if max_iter < 0 or batch_size < 1:
            raise PreconditionError("max_iter must be >= 0 and batch_size >= 1")
        self.hidden, self.activation, self.max_iter = hidden, activation, max_iter
        self.lr, self.batch_size, self.seed, self.dtype = learning_rate_init, batch_size, seed, dtype

    def _init(self, dim: int, n_cls: int, rng: np.random.Generator) -> None:
        widths = (dim, *self.hidden, n_cls)
        self.params_ = []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            bound = np.sqrt(6.0 / (a + b))
            self.params_.append(ParamTensor(rng.uniform(-bound, bound, (a, b)), self.dtype, f"w{i}"))
            self.params_.append(ParamTensor(np.zeros(b), self.dtype, f"b{i}"))

    def _forward(self, x, capture: list | None = None):
        act = _ACTIVATIONS[self.activation]
        h = x
        n_layers = len(self.params_) // 2
        for i in range(n_layers):
            h = linear(h, self.params_[2 * i], self.params_[2 * i + 1])
            if i < n_layers - 1:
                h = act(h)
                if capture is not None:
                    capture.append(h.data)
        return h

    def fit(self, train: FeatureMatrix) -> "MLPClassifier":
        check_fit_input(train)
        rng = np.random.default_rng(self.seed)
        self._init(train.dim, train.num_classes, rng)
        x = np.asarray(train.values, dtype=self.dtype)
        y = train.labels
        self.loss_curve_ = []
        for _ in range(self.max_iter):
            order = rng.permutation(train.rows)
            total = 0.0
            for start in range(0, train.rows, self.batch_size):
                b = order[start:start + self.batch_size]
                with GradientTape() as tape:
                    loss = softmax_cross_entropy(self._forward(x[b]), y[b])
                tape.backward(loss)
                adam_step(self.params_, self.lr)
                zero_grad(self.params_)
                total += float(loss.data) * len(b)
            self.loss_curve_.append(total / train.rows)
        return self

    def hidden_activations(self, x: np.ndarray) -> list[np.ndarray]:
        acts: list = []
        self._forward(np.asarray(x, dtype=self.dtype), capture=acts)
        return acts

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        return self._forward(np.asarray(x, dtype=self.dtype)).data

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.decision_function(x).argmax(axis=1)
