"""Multiclass second-order gradient boosting on quantile-binned features.

Each round fits one regression tree per class to the softmax gradients
g = p - y with hessians h = 2 p (1 - p). Splits maximise

    G_L^2 / H_L + G_R^2 / H_R - G^2 / H      (H floored at 1e-6)

subject to every child holding hessian mass >= ``min_child_weight``; leaves
take the Newton value -G / max(H, 1e-6), shrunk by the learning rate.
"""

from __future__ import annotations

import numba as nb
import numpy as np

from ..core import log_softmax, softmax
from ..errors import PreconditionError
from .base import FeatureMatrix, check_fit_input

MAX_BINS = 256
H_FLOOR = 1e-6


def quantile_cuts(x: np.ndarray, max_bins: int = MAX_BINS) -> list[np.ndarray]:
    """Per-feature split candidates: midpoints between distinct values, or
    midpoints between distinct quantiles when there are too many values."""
    cuts = []
    for col in x.T:
        u = np.unique(col)
        if u.size > max_bins:
            u = np.unique(np.quantile(col, np.linspace(0, 1, max_bins), method="nearest"))
        cuts.append(0.5 * (u[:-1] + u[1:]))
    return cuts


def bin_features(x: np.ndarray, cuts: list[np.ndarray]) -> np.ndarray:
    # bin b holds values in (cuts[b-1], cuts[b]]; "bin <= b" is "x <= cuts[b]"
    out = np.empty(x.shape, np.uint8)
    for j, c in enumerate(cuts):
        out[:, j] = np.searchsorted(c, x[:, j], side="left")
    return out


@nb.njit(cache=True)
def _gain_term(g, h):
    return g * g / max(h, H_FLOOR)


@nb.njit(cache=True)
def _grow(bins, bins_t, n_cuts, g, h, max_depth, min_child_weight):
    n, d = bins.shape
    cap = 2 ** (max_depth + 1)
    cap = min(cap, 2 * n + 1)
    feature = np.full(cap, -1, np.int64)
    split_bin = np.zeros(cap, np.int64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    depth = np.zeros(cap, np.int64)

    idx = np.arange(n)
    st_node = np.zeros(cap, np.int64)
    st_lo = np.zeros(cap, np.int64)
    st_hi = np.zeros(cap, np.int64)
    st_node[0], st_lo[0], st_hi[0] = 0, 0, n
    sp = 1
    n_nodes = 1
    hg = np.zeros(256)
    hh = np.zeros(256)
    gn = np.empty(n)
    hn = np.empty(n)
    tmp = np.empty(n, np.int64)

    while sp > 0:
        sp -= 1
        node, lo, hi = st_node[sp], st_lo[sp], st_hi[sp]
        gs = 0.0
        hs = 0.0
        for i in range(lo, hi):
            gs += g[idx[i]]
            hs += h[idx[i]]
        value[node] = -gs / max(hs, H_FLOOR)
        if depth[node] >= max_depth or hs < 2 * min_child_weight or hi - lo < 2:
            continue
        m = hi - lo
        for i in range(m):
            gn[i] = g[idx[lo + i]]
            hn[i] = h[idx[lo + i]]
        parent = _gain_term(gs, hs)
        best_gain = 1e-12 * max(1.0, parent)
        best_f = -1
        best_b = 0
        for j in range(d):
            # one feature's histogram at a time stays in L1 cache
            hg[:] = 0.0
            hh[:] = 0.0
            col = bins_t[j]
            for i in range(m):
                b = col[idx[lo + i]]
                hg[b] += gn[i]
                hh[b] += hn[i]
            gl = 0.0
            hl = 0.0
            for b in range(n_cuts[j]):
                gl += hg[b]
                hl += hh[b]
                hr = hs - hl
                if hl < min_child_weight:
                    continue
                if hr < min_child_weight:
                    break
                gain = _gain_term(gl, hl) + _gain_term(gs - gl, hr) - parent
                if gain > best_gain:
                    best_gain, best_f, best_b = gain, j, b
        if best_f < 0:
            continue
        nl = 0
        for i in range(lo, hi):
            if bins[idx[i], best_f] <= best_b:
                tmp[nl] = idx[i]
                nl += 1
        nr = nl
        for i in range(lo, hi):
            if bins[idx[i], best_f] > best_b:
                tmp[nr] = idx[i]
                nr += 1
        idx[lo:hi] = tmp[:hi - lo]
        feature[node], split_bin[node] = best_f, best_b
        l_id, r_id = n_nodes, n_nodes + 1
        n_nodes += 2
        left[node], right[node] = l_id, r_id
        depth[l_id] = depth[r_id] = depth[node] + 1
        st_node[sp], st_lo[sp], st_hi[sp] = r_id, lo + nl, hi
        sp += 1
        st_node[sp], st_lo[sp], st_hi[sp] = l_id, lo, lo + nl
        sp += 1
    return (feature[:n_nodes].copy(), split_bin[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy())


@nb.njit(cache=True)
def _tree_apply(x, feature, threshold, left, right, value):
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        node = 0
        while feature[node] >= 0:
            node = left[node] if x[i, feature[node]] <= threshold[node] else right[node]
        out[i] = value[node]
    return out


class GradientBoosting:
    """``multi:softmax`` predicts labels; ``multi:softprob`` also exposes probabilities."""

    def __init__(self, n_estimators: int = 100, max_depth: int = 6,
                 objective: str = "multi:softprob", learning_rate: float = 0.3,
                 min_child_weight: float = 1.0):
        if n_estimators < 1 or max_depth < 1:
            raise PreconditionError("n_estimators and max_depth must be >= 1")
        objective = objective.replace("_", ":")
        if objective not in ("multi:softmax", "multi:softprob"):
            raise PreconditionError(f"unknown objective {objective!r}")
        self.n_estimators, self.max_depth = n_estimators, max_depth
        self.objective, self.learning_rate = objective, learning_rate
        self.min_child_weight = min_child_weight

    def fit(self, train: FeatureMatrix) -> "GradientBoosting":
        check_fit_input(train)
        x = np.asarray(train.values, dtype=np.float64)
        k = train.num_classes
        prior = np.bincount(train.labels, minlength=k) / train.rows
        self.base_score_ = np.log(np.maximum(prior, 1e-6))
        cuts = quantile_cuts(x)
        n_cuts = np.array([c.size for c in cuts], np.int64)
        bins = bin_features(x, cuts)
        bins_t = np.ascontiguousarray(bins.T)
        onehot = np.eye(k)[train.labels]
        scores = np.tile(self.base_score_, (train.rows, 1))
        self.trees_ = []
        self.train_loss_ = [self._loss(scores, train.labels)]
        for _ in range(self.n_estimators):
            p = softmax(scores)
            grad = p - onehot
            hess = 2.0 * p * (1.0 - p)
            round_trees = []
            for c in range(k):
                f, b, left, right, value = _grow(bins, bins_t, n_cuts, np.ascontiguousarray(grad[:, c]),
                                                 np.ascontiguousarray(hess[:, c]),
                                                 self.max_depth, self.min_child_weight)
                thr = np.array([cuts[fj][bj] if fj >= 0 else 0.0 for fj, bj in zip(f, b)])
                tree = (f, thr, left, right, value * self.learning_rate)
                round_trees.append(tree)
                leaf_of = _bin_apply(bins, f, b, left, right, tree[4])
                scores[:, c] += leaf_of
            self.trees_.append(round_trees)
            self.train_loss_.append(self._loss(scores, train.labels))
        self.num_classes_ = k
        return self

    @staticmethod
    def _loss(scores: np.ndarray, labels: np.ndarray) -> float:
        return float(-log_softmax(scores)[np.arange(len(labels)), labels].mean())

    def decision_function(self, x: np.ndarray, rounds: int | None = None) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.float64)
        scores = np.tile(self.base_score_, (x.shape[0], 1))
        for round_trees in self.trees_[:rounds]:
            for c, tree in enumerate(round_trees):
                scores[:, c] += _tree_apply(x, *tree)
        return scores

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        if self.objective != "multi:softprob":
            raise PreconditionError("probabilities are only exposed by multi:softprob")
        return softmax(self.decision_function(x))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.decision_function(x).argmax(axis=1)


@nb.njit(cache=True)
def _bin_apply(bins, feature, split_bin, left, right, value):
    out = np.empty(bins.shape[0])
    for i in range(bins.shape[0]):
        node = 0
        while feature[node] >= 0:
            node = left[node] if bins[i, feature[node]] <= split_bin[node] else right[node]
        out[i] = value[node]
    return out
