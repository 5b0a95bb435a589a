"""One-vs-all support vector machines trained by stochastic subgradient descent."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .. import kernels
from ..errors import WidthMismatch


def rbf_kernel(x, y, gamma: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise WidthMismatch(x.shape[-1], y.shape[-1])
    diff = x - y
    return float(np.exp(-gamma * float(diff @ diff)))


def rbf_matrix(A: np.ndarray, B: np.ndarray, gamma: float, a_sq=None, b_sq=None) -> np.ndarray:
    if a_sq is None:
        a_sq = np.einsum("ij,ij->i", A, A)
    if b_sq is None:
        b_sq = np.einsum("ij,ij->i", B, B)
    d2 = a_sq[:, None] + b_sq[None, :] - 2.0 * (A @ B.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-gamma * d2)


def _sign_matrix(y_idx: np.ndarray, n_classes: int) -> np.ndarray:
    ysign = -np.ones((len(y_idx), n_classes), dtype=np.float64)
    ysign[np.arange(len(y_idx)), y_idx] = 1.0
    return ysign


class LinearSVM:
    """Primal Pegasos per class with a regularized bias column; argmax decision."""

    def __init__(self, C: float = 0.01, epochs: int = 20):
        self.C = C
        self.epochs = epochs

    def fit(self, X, y_idx, n_classes, rng):
        n, d = X.shape
        lam = 1.0 / (self.C * n)
        Xa = sp.csr_matrix(np.hstack([X, np.ones((n, 1))]))
        Xa.sort_indices()
        order = np.concatenate([rng.permutation(n) for _ in range(self.epochs)]).astype(np.intp)
        V = np.zeros((n_classes, d + 1))
        scale = np.ones(n_classes)
        norm2 = np.zeros(n_classes)
        kernels.pegasos_linear(
            V, scale, norm2,
            Xa.indptr.astype(np.intp), Xa.indices.astype(np.intp), Xa.data.astype(np.float64),
            _sign_matrix(y_idx, n_classes), order, lam,
        )
        W = scale[:, None] * V
        self.coef_ = np.ascontiguousarray(W[:, :d])
        self.intercept_ = np.ascontiguousarray(W[:, d])
        return self

    def decision_function(self, X):
        return X @ self.coef_.T + self.intercept_

    def predict_index(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def get_state(self):
        return {"coef": self.coef_, "intercept": self.intercept_}

    def set_state(self, state):
        self.coef_ = np.asarray(state["coef"], dtype=np.float64)
        self.intercept_ = np.asarray(state["intercept"], dtype=np.float64)
        return self


class KernelSVM:
    """Kernelized mini-batch Pegasos with a bounded, shared support set.

    After T steps the per-class decision is
    ``f_k(x) = 1/(lam*T) * sum_j coef[j, k] * (K(x_j, x) + 1)``; the ``+ 1``
    is an implicit bias feature. When the support set is full, the member with
    the smallest total |coef| is evicted.
    """

    def __init__(self, C=1.0, gamma=1e-3, epochs=20, batch_size=32, support_cap=2000):
        self.C = C
        self.gamma = gamma
        self.epochs = epochs
        self.batch_size = batch_size
        self.support_cap = support_cap

    def _kernel(self, A, B, a_sq=None, b_sq=None):
        return rbf_matrix(A, B, self.gamma, a_sq, b_sq) + 1.0

    def fit(self, X, y_idx, n_classes, rng):
        n, d = X.shape
        lam = 1.0 / (self.C * n)
        ysign = _sign_matrix(y_idx, n_classes)
        sq = np.einsum("ij,ij->i", X, X)
        Xc = sp.csr_matrix(X)
        indptr = Xc.indptr.astype(np.intp)
        indices = Xc.indices.astype(np.intp)
        data = Xc.data.astype(np.float64)

        cap = min(self.support_cap, n)
        members = np.full(cap, -1, dtype=np.intp)
        ST = np.zeros((d, cap))  # support rows, transposed
        s_sq = np.zeros(cap)
        coef = np.zeros((cap, n_classes))
        mass = np.zeros(cap)  # sum_k |coef[slot, k]|, the eviction key
        slot_of = {}
        size = 0
        t = 0
        for _ in range(self.epochs):
            perm = rng.permutation(n).astype(np.intp)
            for start in range(0, n, self.batch_size):
                batch = perm[start:start + self.batch_size]
                t += 1
                if size == 0:
                    f = np.zeros((len(batch), n_classes))
                else:
                    # Kb = exp(-gamma * max(0, |x|^2 + |s|^2 - 2 x.s)) + 1, built in place
                    Kb = kernels.csr_rows_dot(indptr, indices, data, batch, ST, size)
                    Kb *= 2.0 * self.gamma
                    Kb -= self.gamma * sq[batch, None]
                    Kb -= self.gamma * s_sq[None, :size]
                    np.minimum(Kb, 0.0, out=Kb)
                    np.exp(Kb, out=Kb)
                    Kb += 1.0
                    f = (Kb @ coef[:size]) / (lam * (t - 1))
                violated = ysign[batch] * f < 1.0
                hit = np.flatnonzero(violated.any(axis=1))
                if len(hit) == 0:
                    continue
                slots = np.empty(len(hit), dtype=np.intp)
                for h, r in enumerate(hit):
                    i = int(batch[r])
                    slot = slot_of.get(i)
                    if slot is None:
                        if size < cap:
                            slot = size
                            size += 1
                        else:
                            # never evict a slot that is receiving an update in this batch
                            masked = mass.copy()
                            masked[slots[:h]] = np.inf
                            slot = int(np.argmin(masked))
                            del slot_of[int(members[slot])]
                            coef[slot] = 0.0
                            mass[slot] = 0.0
                        members[slot] = i
                        slot_of[i] = slot
                        ST[:, slot] = X[i]
                        s_sq[slot] = sq[i]
                    slots[h] = slot
                rows = batch[hit]
                coef[slots] += np.where(violated[hit], ysign[rows], 0.0) / len(batch)
                mass[slots] = np.abs(coef[slots]).sum(axis=1)
        self.support_ = np.ascontiguousarray(X[members[:size]])
        self.dual_coef_ = coef[:size] / (lam * max(t, 1))
        self.n_classes_ = n_classes
        return self

    def decision_function(self, X):
        if len(self.support_) == 0:
            return np.zeros((X.shape[0], self.n_classes_))
        out = np.empty((X.shape[0], self.n_classes_))
        s_sq = np.einsum("ij,ij->i", self.support_, self.support_)
        for start in range(0, X.shape[0], 2048):
            chunk = X[start:start + 2048]
            out[start:start + 2048] = self._kernel(chunk, self.support_, None, s_sq) @ self.dual_coef_
        return out

    def predict_index(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def get_state(self):
        return {"support": self.support_, "dual_coef": self.dual_coef_, "n_classes": self.n_classes_}

    def set_state(self, state):
        self.support_ = np.asarray(state["support"], dtype=np.float64)
        self.dual_coef_ = np.asarray(state["dual_coef"], dtype=np.float64)
        self.n_classes_ = int(state["n_classes"])
        return self
