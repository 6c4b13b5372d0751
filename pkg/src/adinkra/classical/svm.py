"""One-vs-rest linear SVM trained by deterministic full-batch sub-gradient descent."""

from __future__ import annotations

import numpy as np

from ..errors import DegenerateInputError, PreconditionError
from .base import FeatureMatrix, check_fit_input


class LinearSVC:
    """Per class minimises 1/2 |w|^2 + C * sum loss(y_i (w.x_i + b)).

    Divided by nC this is lam/2 |w|^2 + mean loss with lam = 1/(nC); epoch t
    takes a step of 1/(lam t) and projects onto the ball that must contain
    the optimum. The squared hinge has an unbounded gradient, so for it the
    step is additionally capped at 1/L, L being the objective's smoothness
    constant. The intercept is the weight of a constant input feature, so it
    is regularised as well.
    """

    def __init__(self, loss: str = "squared_hinge", C: float = 1.0, penalty: str = "l2",
                 max_iter: int = 1000):
        if loss not in ("hinge", "squared_hinge") or penalty != "l2":
            raise PreconditionError(f"unsupported loss={loss!r} / penalty={penalty!r}")
        if max_iter < 1 or not C > 0:
            raise PreconditionError("max_iter must be >= 1 and C > 0")
        self.loss, self.C, self.max_iter = loss, C, max_iter

    def fit(self, train: FeatureMatrix) -> "LinearSVC":
        check_fit_input(train)
        present = np.unique(train.labels)
        if present.size < 2:
            raise DegenerateInputError("LinearSVC needs at least two classes in the training set")
        n = train.rows
        xa = np.hstack([np.asarray(train.values, dtype=np.float64), np.ones((n, 1))])
        y = np.where(train.labels[:, None] == np.arange(train.num_classes), 1.0, -1.0)
        lam = 1.0 / (n * self.C)
        # lam/2 |w|^2 <= objective(0) = loss(0) bounds the optimum's norm
        radius = np.sqrt(2.0 / lam)
        max_step = np.inf
        if self.loss == "squared_hinge":
            max_step = 1.0 / (lam + 2.0 * np.linalg.eigvalsh(xa.T @ xa / n)[-1])
        w = np.zeros((xa.shape[1], train.num_classes))
        for t in range(1, self.max_iter + 1):
            slack = 1.0 - y * (xa @ w)
            if self.loss == "hinge":
                coef = np.where(slack > 0, -y, 0.0)
            else:
                coef = -2.0 * y * np.maximum(slack, 0.0)
            grad = lam * w + xa.T @ coef / n
            w -= min(1.0 / (lam * t), max_step) * grad
            norms = np.linalg.norm(w, axis=0)
            w *= np.minimum(1.0, radius / np.maximum(norms, 1e-300))
        self.coef_, self.intercept_ = w[:-1].T, w[-1]
        # classes absent from training never win
        self.absent_ = np.setdiff1d(np.arange(train.num_classes), present)
        return self

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        scores = np.asarray(x, dtype=np.float64) @ self.coef_.T + self.intercept_
        scores[:, self.absent_] = -np.inf
        return scores

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.decision_function(x).argmax(axis=1)
