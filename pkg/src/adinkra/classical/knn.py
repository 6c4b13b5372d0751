"""Exact brute-force k-nearest-neighbour classification."""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist

from ..errors import PreconditionError
from .base import FeatureMatrix, check_fit_input

_METRIC = {1: "cityblock", 2: "euclidean"}


def _vote(dist: np.ndarray, labels: np.ndarray, k: int, weights: str, n_cls: int) -> np.ndarray:
    # neighbours ordered by (distance, label) so equal distances resolve the same way every time
    order = np.lexsort((np.broadcast_to(labels, dist.shape), dist), axis=1)[:, :k]
    nd = np.take_along_axis(dist, order, axis=1)
    nl = labels[order]
    votes = np.zeros((dist.shape[0], n_cls))
    rows = np.repeat(np.arange(dist.shape[0]), k)
    if weights == "uniform":
        w = np.ones_like(nd)
    else:
        exact = nd == 0
        with np.errstate(divide="ignore"):
            w = np.where(exact.any(axis=1, keepdims=True), exact.astype(float), 1.0 / nd)
    np.add.at(votes, (rows, nl.ravel()), w.ravel())
    return votes.argmax(axis=1)  # first maximum = smallest class index


def knn_classify(train: FeatureMatrix, queries: np.ndarray, k: int = 5,
                 weights: str = "uniform", p: int = 2, chunk: int = 1024) -> np.ndarray:
    check_fit_input(train)
    if not 1 <= k <= train.rows:
        raise PreconditionError(f"k must be in [1, {train.rows}], got {k}")
    if p not in _METRIC or weights not in ("uniform", "distance"):
        raise PreconditionError(f"unsupported metric p={p} or weights={weights!r}")
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    x = np.asarray(train.values, dtype=np.float64)
    out = [_vote(cdist(q[i:i + chunk], x, _METRIC[p]), train.labels, k, weights, train.num_classes)
           for i in range(0, len(q), chunk)]
    return np.concatenate(out) if out else np.zeros(0, np.int64)


class KNNClassifier:
    def __init__(self, n_neighbors: int = 5, weights: str = "uniform", p: int = 2):
        self.n_neighbors, self.weights, self.p = n_neighbors, weights, p

    def fit(self, train: FeatureMatrix) -> "KNNClassifier":
        check_fit_input(train)
        if self.n_neighbors > train.rows:
            raise PreconditionError(f"k={self.n_neighbors} exceeds {train.rows} training rows")
        self.train_ = train
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        return knn_classify(self.train_, x, self.n_neighbors, self.weights, self.p)
