"""CART decision trees and random forests with exact threshold search.

Candidate thresholds are midpoints between consecutive distinct values of a
feature within the node. Among equally good splits the lower feature index
wins, then the lower threshold; a split is taken only if it lowers the
node's impurity.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

from ..errors import PreconditionError
from .base import FeatureMatrix, check_fit_input

_CRITERIA = {"gini": 0, "entropy": 1, "log_loss": 1}
_EPS = 1e-12


@nb.njit(cache=True)
def _splitmix(state):
    state = (state + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = state
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    return state, z ^ (z >> np.uint64(31))


@nb.njit(cache=True)
def _impurity_sum(counts_sq_or_clog, m, crit):
    # m * impurity, from sum(c^2) (gini) or sum(c log c) (entropy)
    if m == 0:
        return 0.0
    if crit == 0:
        return m - counts_sq_or_clog / m
    return m * math.log(m) - counts_sq_or_clog


@nb.njit(cache=True)
def _build(x, y, n_cls, sample, max_depth, max_features, crit, seed):
    n_feat = x.shape[1]
    cap = 2 * sample.size + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    label = np.zeros(cap, np.int64)
    depth_of = np.zeros(cap, np.int64)

    clog = np.zeros(sample.size + 2)
    for c in range(1, sample.size + 2):
        clog[c] = c * math.log(c)

    idx = sample.copy()
    # stack of (node, start, end)
    st_node = np.zeros(cap, np.int64)
    st_lo = np.zeros(cap, np.int64)
    st_hi = np.zeros(cap, np.int64)
    sp = 0
    st_node[0], st_lo[0], st_hi[0] = 0, 0, idx.size
    sp = 1
    n_nodes = 1
    rng = np.uint64(seed)
    tot = np.zeros(n_cls, np.int64)
    lc = np.zeros(n_cls, np.int64)
    perm = np.arange(n_feat)
    vals = np.empty(idx.size)

    while sp > 0:
        sp -= 1
        node, lo, hi = st_node[sp], st_lo[sp], st_hi[sp]
        m = hi - lo
        tot[:] = 0
        for i in range(lo, hi):
            tot[y[idx[i]]] += 1
        best_c = 0
        for c in range(n_cls):
            if tot[c] > tot[best_c]:
                best_c = c
        label[node] = best_c
        if tot[best_c] == m or m < 2 or (max_depth >= 0 and depth_of[node] >= max_depth):
            continue

        s_tot = 0.0
        for c in range(n_cls):
            s_tot += tot[c] * tot[c] if crit == 0 else clog[tot[c]]
        parent = _impurity_sum(s_tot, m, crit)

        # features to evaluate: all of them, or a random subset that keeps
        # drawing until max_features non-constant ones have been seen
        for j in range(n_feat):
            perm[j] = j
        evaluated = 0
        tol = _EPS * max(1.0, parent)
        best_f, best_t, best_score = -1, 0.0, np.inf
        for jj in range(n_feat):
            if max_features < n_feat:
                if evaluated >= max_features:
                    break
                rng, r = _splitmix(rng)
                k = jj + np.int64(r % np.uint64(n_feat - jj))
                perm[jj], perm[k] = perm[k], perm[jj]
            f = perm[jj]
            for i in range(lo, hi):
                vals[i - lo] = x[idx[i], f]
            order = np.argsort(vals[:m], kind="mergesort")
            if vals[order[0]] == vals[order[m - 1]]:
                continue
            evaluated += 1
            lc[:] = 0
            s_l = 0.0
            s_r = s_tot
            for pos in range(m - 1):
                c = y[idx[lo + order[pos]]]
                a = lc[c]
                b = tot[c] - a
                if crit == 0:
                    s_l += 2 * a + 1
                    s_r -= 2 * b - 1
                else:
                    s_l += clog[a + 1] - clog[a]
                    s_r += clog[b - 1] - clog[b]
                lc[c] = a + 1
                v0 = vals[order[pos]]
                v1 = vals[order[pos + 1]]
                if v0 == v1:
                    continue
                ml = pos + 1
                score = _impurity_sum(s_l, ml, crit) + _impurity_sum(s_r, m - ml, crit)
                thr = 0.5 * (v0 + v1)
                if thr == v1:  # midpoint rounded up; keep v1 on the right
                    thr = v0
                if score < best_score - tol:
                    best_f, best_t, best_score = f, thr, score
                elif score <= best_score + tol and (f < best_f or (f == best_f and thr < best_t)):
                    best_f, best_t, best_score = f, thr, min(score, best_score)
        if best_f < 0 or best_score >= parent - tol:
            continue

        # partition idx[lo:hi] stably around the threshold
        nl = 0
        tmp = np.empty(m, np.int64)
        for i in range(lo, hi):
            if x[idx[i], best_f] <= best_t:
                tmp[nl] = idx[i]
                nl += 1
        nr = nl
        for i in range(lo, hi):
            if x[idx[i], best_f] > best_t:
                tmp[nr] = idx[i]
                nr += 1
        idx[lo:hi] = tmp
        feature[node], threshold[node] = best_f, best_t
        l_id, r_id = n_nodes, n_nodes + 1
        n_nodes += 2
        left[node], right[node] = l_id, r_id
        depth_of[l_id] = depth_of[r_id] = depth_of[node] + 1
        # push right first so the left subtree is expanded first
        st_node[sp], st_lo[sp], st_hi[sp] = r_id, lo + nl, hi
        sp += 1
        st_node[sp], st_lo[sp], st_hi[sp] = l_id, lo, lo + nl
        sp += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), label[:n_nodes].copy(), depth_of[:n_nodes].copy())


@nb.njit(cache=True)
def _apply(x, feature, threshold, left, right, label):
    out = np.empty(x.shape[0], np.int64)
    for i in range(x.shape[0]):
        node = 0
        while feature[node] >= 0:
            node = left[node] if x[i, feature[node]] <= threshold[node] else right[node]
        out[i] = label[node]
    return out


class DecisionTree:
    """Greedy CART classifier. ``max_features=None`` scans every feature."""

    def __init__(self, criterion: str = "gini", max_depth: int | None = None,
                 splitter: str = "best", max_features: int | None = None, seed: int = 0):
        if criterion not in _CRITERIA:
            raise PreconditionError(f"unknown criterion {criterion!r}")
        if splitter != "best":
            raise PreconditionError(f"only the 'best' splitter is supported, got {splitter!r}")
        if max_depth is not None and max_depth < 0:
            raise PreconditionError("max_depth must be >= 0 or None")
        self.criterion, self.max_depth = criterion, max_depth
        self.max_features, self.seed = max_features, seed

    def fit(self, train: FeatureMatrix, sample: np.ndarray | None = None) -> "DecisionTree":
        check_fit_input(train)
        x = np.ascontiguousarray(train.values, dtype=np.float64)
        if sample is None:
            sample = np.arange(train.rows, dtype=np.int64)
        mf = x.shape[1] if self.max_features is None else min(self.max_features, x.shape[1])
        (self.feature_, self.threshold_, self.left_, self.right_, self.label_,
         self.node_depth_) = _build(
            x, train.labels, train.num_classes, np.asarray(sample, np.int64),
            -1 if self.max_depth is None else self.max_depth, mf, _CRITERIA[self.criterion],
            np.uint64(self.seed % 2**64))
        self.num_classes_ = train.num_classes
        return self

    @property
    def depth(self) -> int:
        return int(self.node_depth_.max())

    @property
    def node_count(self) -> int:
        return len(self.feature_)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return _apply(np.ascontiguousarray(x, dtype=np.float64), self.feature_, self.threshold_,
                      self.left_, self.right_, self.label_)


class RandomForest:
    """Bagged trees, sqrt(dim) features per node, hard majority vote."""

    def __init__(self, n_estimators: int = 100, criterion: str = "gini",
                 max_depth: int | None = None, seed: int = 0):
        if n_estimators < 1:
            raise PreconditionError("n_estimators must be >= 1")
        self.n_estimators, self.criterion, self.max_depth, self.seed = (
            n_estimators, criterion, max_depth, seed)

    def fit(self, train: FeatureMatrix) -> "RandomForest":
        check_fit_input(train)
        mf = max(1, int(math.sqrt(train.dim)))
        rng = np.random.default_rng(self.seed)
        self.trees_ = []
        for _ in range(self.n_estimators):
            boot = rng.integers(0, train.rows, train.rows)
            tree = DecisionTree(self.criterion, self.max_depth, max_features=mf,
                                seed=int(rng.integers(2**63)))
            self.trees_.append(tree.fit(train, boot))
        self.num_classes_ = train.num_classes
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.float64)
        votes = np.zeros((x.shape[0], self.num_classes_), np.int64)
        rows = np.arange(x.shape[0])
        for t in self.trees_:
            votes[rows, t.predict(x)] += 1
        return votes.argmax(axis=1)
