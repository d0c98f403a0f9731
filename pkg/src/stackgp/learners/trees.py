"""Regression trees shared by the boosting and forest learners.

Exact split search: candidate thresholds are midpoints between consecutive
sorted unique values, scored by squared-error reduction. Ties break toward
the lower column index, then the lower threshold, so refits are bit-stable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GAIN_EPS = 1e-12


def _best_split(X, y, idx, features, min_leaf):
    """Best (gain, feature, threshold) over candidate features at one node.

    Returns feature -1 when no split achieves a positive reduction.
    """
    n = idx.size
    y_node = y[idx]
    total = float(y_node.sum())
    node_ss = float(y_node @ y_node) - total * total / n
    # guard keeps fp noise on constant nodes from producing phantom splits
    best_gain = GAIN_EPS * max(1.0, abs(node_ss))
    best_feature, best_threshold = -1, 0.0
    base = total * total / n
    ks = np.arange(1, n)
    for j in features:
        order = np.argsort(X[idx, j], kind="stable")
        xs = X[idx[order], j]
        ys = y_node[order]
        valid = xs[1:] > xs[:-1]
        if min_leaf > 1:
            valid &= (ks >= min_leaf) & (n - ks >= min_leaf)
        if not valid.any():
            continue
        left_sum = np.cumsum(ys)[:-1]
        gains = np.where(
            valid,
            left_sum**2 / ks + (total - left_sum) ** 2 / (n - ks) - base,
            -np.inf,
        )
        k = int(np.argmax(gains))
        if gains[k] > best_gain:
            best_gain = float(gains[k])
            best_feature = int(j)
            best_threshold = 0.5 * (xs[k] + xs[k + 1])
    return best_gain, best_feature, best_threshold


@dataclass
class RegressionTree:
    """Flat-array tree; feature == -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.empty(X.shape[0])
        stack = [(0, np.arange(X.shape[0]))]
        while stack:
            node, rows = stack.pop()
            if rows.size == 0:
                continue
            j = self.feature[node]
            if j < 0:
                out[rows] = self.value[node]
                continue
            go_left = X[rows, j] <= self.threshold[node]
            stack.append((self.left[node], rows[go_left]))
            stack.append((self.right[node], rows[~go_left]))
        return out

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(
            feature=np.asarray(d["feature"], dtype=int),
            threshold=np.asarray(d["threshold"], dtype=float),
            left=np.asarray(d["left"], dtype=int),
            right=np.asarray(d["right"], dtype=int),
            value=np.asarray(d["value"], dtype=float),
        )


def grow_tree(X, y, *, max_depth, min_samples_leaf, mtry=None, rng=None) -> RegressionTree:
    """Grow one tree to depth/leaf limits.

    mtry, when set, samples that many features per node from rng (the forest
    case); otherwise every feature is a candidate. Children are built left
    first, so rng draws are reproducible.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = X.shape
    depth_cap = np.inf if max_depth is None else max_depth
    feature, threshold, left, right, value = [], [], [], [], []

    def add_node(mean):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(mean)
        return len(feature) - 1

    def build(idx, depth):
        node = add_node(float(y[idx].mean()))
        if depth >= depth_cap or idx.size < 2 * min_samples_leaf:
            return node
        if mtry is None or mtry >= m:
            candidates = range(m)
        else:
            candidates = np.sort(rng.choice(m, size=mtry, replace=False))
        _, j, thr = _best_split(X, y, idx, candidates, min_samples_leaf)
        if j < 0:
            return node
        go_left = X[idx, j] <= thr
        feature[node] = j
        threshold[node] = thr
        left[node] = build(idx[go_left], depth + 1)
        right[node] = build(idx[~go_left], depth + 1)
        return node

    build(np.arange(n), 0)
    return RegressionTree(
        feature=np.asarray(feature, dtype=int),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=int),
        right=np.asarray(right, dtype=int),
        value=np.asarray(value, dtype=float),
    )
