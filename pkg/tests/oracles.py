"""Independent reference implementations used as test oracles."""

import math

import numpy as np


def brute_force_knn(x, y, q, k, p, n_cls):
    out = []
    for row in q:
        dist = [(sum(abs(a - b) ** p for a, b in zip(row, pt)) ** (1.0 / p), lab)
                for pt, lab in zip(x, y)]
        dist.sort()
        votes = [0] * n_cls
        for _, lab in dist[:k]:
            votes[lab] += 1
        out.append(votes.index(max(votes)))
    return np.array(out)


def _weighted_impurity(labels, n_cls, criterion):
    m = len(labels)
    if m == 0:
        return 0.0
    counts = np.bincount(labels, minlength=n_cls)
    if criterion == "gini":
        return m * (1.0 - sum((c / m) ** 2 for c in counts))
    return -sum(c * math.log(c / m) for c in counts if c)


def exhaustive_tree(x, y, n_cls, depth, criterion):
    """Tree as nested tuples: ("leaf", label) or (feature, threshold, left, right)."""
    counts = np.bincount(y, minlength=n_cls)
    leaf = ("leaf", int(np.argmax(counts)))
    if depth == 0 or counts.max() == len(y):
        return leaf
    parent = _weighted_impurity(y, n_cls, criterion)
    tol = 1e-9 * max(1.0, parent)
    candidates = []
    for f in range(x.shape[1]):
        u = np.unique(x[:, f])
        for t in (u[:-1] + u[1:]) / 2:
            mask = x[:, f] <= t
            score = (_weighted_impurity(y[mask], n_cls, criterion)
                     + _weighted_impurity(y[~mask], n_cls, criterion))
            candidates.append((score, f, t))
    if not candidates:
        return leaf
    best = min(s for s, _, _ in candidates)
    if best >= parent - tol:
        return leaf
    _, f, t = min((c for c in candidates if c[0] <= best + tol), key=lambda c: (c[1], c[2]))
    mask = x[:, f] <= t
    return (f, t, exhaustive_tree(x[mask], y[mask], n_cls, depth - 1, criterion),
            exhaustive_tree(x[~mask], y[~mask], n_cls, depth - 1, criterion))


def as_nested(tree, node=0):
    if tree.feature_[node] < 0:
        return ("leaf", int(tree.label_[node]))
    return (int(tree.feature_[node]), float(tree.threshold_[node]),
            as_nested(tree, tree.left_[node]), as_nested(tree, tree.right_[node]))
