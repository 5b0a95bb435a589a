"""Information-gain decision trees and the bagged forest built from them."""

from __future__ import annotations

import math
from collections import Counter
from typing import Hashable, Sequence

import numpy as np

from .. import kernels
from ..errors import NotAPartition


def entropy(labels: Sequence[Hashable]) -> float:
    n = len(labels)
    if n == 0:
        return 0.0
    h = 0.0
    for count in Counter(labels).values():
        p = count / n
        h -= p * math.log2(p)
    return h


def information_gain(parent_labels, partitions) -> float:
    """Entropy reduction, in bits, from splitting ``parent_labels`` into ``partitions``.

    >>> information_gain("AAAABBBB", ["AAAA", "BBBB"])
    1.0
    >>> information_gain("AAAABBBB", ["AABB", "AABB"])
    0.0
    >>> round(information_gain("A" * 8 + "B" * 4, ["A" * 6, "AABBBB"]), 5)
    0.45915
    """
    parent = list(parent_labels)
    parts = [list(p) for p in partitions]
    if Counter(parent) != sum((Counter(p) for p in parts), Counter()):
        raise NotAPartition("partitions do not recombine into the parent multiset")
    n = len(parent)
    if n == 0:
        return 0.0
    gain = entropy(parent) - sum(len(p) / n * entropy(p) for p in parts)
    # exact zero when every part repeats the parent distribution
    return max(gain, 0.0)


def xlogx_table(n: int) -> np.ndarray:
    c = np.arange(n + 1, dtype=np.float64)
    out = np.zeros(n + 1)
    out[1:] = c[1:] * np.log2(c[1:])
    return out


class DecisionTree:
    """Binary tree over ``x[feature] <= threshold`` tests; leaves hold class indices."""

    def __init__(self, max_depth=25, max_candidates=32, max_features=None):
        self.max_depth = max_depth
        self.max_candidates = max_candidates
        self.max_features = max_features

    def fit(self, X, y_idx, n_classes, rng, rows=None):
        X = np.ascontiguousarray(X, dtype=np.float64)
        y_idx = np.ascontiguousarray(y_idx, dtype=np.intp)
        n, width = X.shape
        if rows is None:
            rows = np.arange(n, dtype=np.intp)
        max_features = self.max_features or math.ceil(math.sqrt(width))
        xlogx = xlogx_table(len(rows))
        feature, threshold, left, right, value = [], [], [], [], []

        def new_node():
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(-1)
            return len(feature) - 1

        root = new_node()
        stack = [(root, np.asarray(rows, dtype=np.intp), 0)]
        while stack:
            node, node_rows, depth = stack.pop()
            counts = np.bincount(y_idx[node_rows], minlength=n_classes)
            value[node] = int(np.argmax(counts))
            m = len(node_rows)
            if m < 2 or depth >= self.max_depth or np.count_nonzero(counts) == 1:
                continue
            columns = rng.permutation(width).astype(np.intp)
            col, thr, score = kernels.best_split(
                X, node_rows, y_idx, n_classes, columns, max_features, self.max_candidates, xlogx
            )
            if col < 0:
                continue
            parent = xlogx[m]
            for k in range(n_classes):
                parent -= xlogx[counts[k]]
            if parent - score <= 1e-9 * m:
                continue
            go_left = X[node_rows, col] <= thr
            feature[node] = int(col)
            threshold[node] = float(thr)
            l, r = new_node(), new_node()
            left[node], right[node] = l, r
            stack.append((r, node_rows[~go_left], depth + 1))
            stack.append((l, node_rows[go_left], depth + 1))

        self.feature_ = np.array(feature, dtype=np.intp)
        self.threshold_ = np.array(threshold, dtype=np.float64)
        self.left_ = np.array(left, dtype=np.intp)
        self.right_ = np.array(right, dtype=np.intp)
        self.value_ = np.array(value, dtype=np.intp)
        return self

    def predict_index(self, X):
        node = np.zeros(X.shape[0], dtype=np.intp)
        active = self.feature_[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            cur = node[idx]
            go_left = X[idx, self.feature_[cur]] <= self.threshold_[cur]
            node[idx] = np.where(go_left, self.left_[cur], self.right_[cur])
            active[idx] = self.feature_[node[idx]] >= 0
        return self.value_[node]

    def get_state(self):
        return {
            "feature": self.feature_, "threshold": self.threshold_,
            "left": self.left_, "right": self.right_, "value": self.value_,
        }

    def set_state(self, state):
        self.feature_ = np.asarray(state["feature"], dtype=np.intp)
        self.threshold_ = np.asarray(state["threshold"], dtype=np.float64)
        self.left_ = np.asarray(state["left"], dtype=np.intp)
        self.right_ = np.asarray(state["right"], dtype=np.intp)
        self.value_ = np.asarray(state["value"], dtype=np.intp)
        return self


class RandomForest:
    def __init__(self, n_trees=20, max_depth=25, max_candidates=32, bootstrap=True):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.max_candidates = max_candidates
        self.bootstrap = bootstrap

    def fit(self, X, y_idx, n_classes, rng):
        n = X.shape[0]
        X = np.ascontiguousarray(X, dtype=np.float64)
        self.n_classes_ = n_classes
        self.trees_ = []
        for seed in rng.integers(0, 2**63, size=self.n_trees):
            tree_rng = np.random.default_rng(int(seed))
            rows = tree_rng.integers(0, n, size=n) if self.bootstrap else np.arange(n)
            tree = DecisionTree(self.max_depth, self.max_candidates)
            self.trees_.append(tree.fit(X, y_idx, n_classes, tree_rng, rows=rows))
        return self

    def predict_index(self, X):
        votes = np.zeros((X.shape[0], self.n_classes_), dtype=np.int64)
        rows = np.arange(X.shape[0])
        for tree in self.trees_:
            votes[rows, tree.predict_index(X)] += 1
        # argmax takes the first maximum, i.e. the lowest bin on ties
        return np.argmax(votes, axis=1)

    def get_state(self):
        return {"n_classes": self.n_classes_, "trees": [t.get_state() for t in self.trees_]}

    def set_state(self, state):
        self.n_classes_ = int(state["n_classes"])
        self.trees_ = [DecisionTree(self.max_depth, self.max_candidates).set_state(s) for s in state["trees"]]
        return self
