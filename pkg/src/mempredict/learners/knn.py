"""Brute-force k nearest neighbours: a voting classifier and a memory regressor."""

from __future__ import annotations

import numpy as np

from ..featurization import memory_to_bin

_CHUNK = 512
_EXTRA = 16


def nearest_neighbors(X_train, X_query, k):
    """Indices and Euclidean distances of the k nearest training rows per query.

    Order is (distance, training index). A dot-product expansion preselects
    candidates; every candidate within rounding slack of the cut is then
    re-scored by direct differences, so ties and near-ties resolve exactly.
    """
    n = X_train.shape[0]
    k = min(k, n)
    m = min(n, k + _EXTRA)
    t_sq = np.einsum("ij,ij->i", X_train, X_train)
    idx_out = np.empty((X_query.shape[0], k), dtype=np.intp)
    dist_out = np.empty((X_query.shape[0], k))
    for start in range(0, X_query.shape[0], _CHUNK):
        Q = X_query[start:start + _CHUNK]
        q_sq = np.einsum("ij,ij->i", Q, Q)
        approx = q_sq[:, None] + t_sq[None, :] - 2.0 * (Q @ X_train.T)
        cut = np.partition(approx, m - 1, axis=1)[:, m - 1]
        slack = 1e-9 * (q_sq + t_sq.max()) + 1e-12
        for r in range(Q.shape[0]):
            cand = np.flatnonzero(approx[r] <= cut[r] + slack[r])
            diff = X_train[cand] - Q[r]
            d2 = np.einsum("ij,ij->i", diff, diff)
            order = np.lexsort((cand, d2))[:k]
            idx_out[start + r] = cand[order]
            dist_out[start + r] = np.sqrt(d2[order])
    return idx_out, dist_out


class KNNClassifier:
    """Majority vote; a vote tie goes to the tied class with the closest member."""

    def __init__(self, k=5):
        self.k = k

    def fit(self, X, y_idx, n_classes, rng=None):
        self.X_ = np.ascontiguousarray(X, dtype=np.float64)
        self.y_ = np.asarray(y_idx, dtype=np.intp)
        self.n_classes_ = n_classes
        return self

    def predict_index(self, X):
        idx, _ = nearest_neighbors(self.X_, np.asarray(X, dtype=np.float64), self.k)
        labels = self.y_[idx]
        out = np.empty(len(labels), dtype=np.intp)
        for r, row in enumerate(labels):
            counts = np.bincount(row, minlength=self.n_classes_)
            winners = counts == counts.max()
            # neighbours are sorted nearest-first
            out[r] = next(c for c in row if winners[c])
        return out

    def get_state(self):
        return {"X": self.X_, "y": self.y_, "n_classes": self.n_classes_}

    def set_state(self, state):
        self.X_ = np.asarray(state["X"], dtype=np.float64)
        self.y_ = np.asarray(state["y"], dtype=np.intp)
        self.n_classes_ = int(state["n_classes"])
        return self


def nearest_class_bin(value_mib, classes, bin_size_mib, max_bin):
    """The containing bin if it was observed, else the observed bin with the closest centre."""
    b = memory_to_bin(value_mib, bin_size_mib, max_bin)
    classes = np.asarray(classes)
    hit = np.flatnonzero(classes == b)
    if len(hit):
        return int(hit[0])
    centers = (classes + 0.5) * bin_size_mib
    return int(np.argmin(np.abs(centers - value_mib)))


class KNNBinRegressor:
    """Inverse-distance-weighted mean of neighbour memory, reported as a bin."""

    def __init__(self, k=5, bin_size_mib=512, max_bin=256):
        self.k = k
        self.bin_size_mib = bin_size_mib
        self.max_bin = max_bin

    def fit(self, X, y_idx, n_classes, rng=None, *, mem_mib, classes):
        self.X_ = np.ascontiguousarray(X, dtype=np.float64)
        self.mem_ = np.asarray(mem_mib, dtype=np.float64)
        self.classes_ = np.asarray(classes, dtype=np.int64)
        return self

    def predict_memory(self, X):
        idx, dist = nearest_neighbors(self.X_, np.asarray(X, dtype=np.float64), self.k)
        w = 1.0 / (dist + 1e-9)
        return np.sum(w * self.mem_[idx], axis=1) / np.sum(w, axis=1)

    def predict_index(self, X):
        mem = self.predict_memory(X)
        return np.array(
            [nearest_class_bin(m, self.classes_, self.bin_size_mib, self.max_bin) for m in mem],
            dtype=np.intp,
        )

    def get_state(self):
        return {"X": self.X_, "mem": self.mem_, "classes": self.classes_}

    def set_state(self, state):
        self.X_ = np.asarray(state["X"], dtype=np.float64)
        self.mem_ = np.asarray(state["mem"], dtype=np.float64)
        self.classes_ = np.asarray(state["classes"], dtype=np.int64)
        return self
