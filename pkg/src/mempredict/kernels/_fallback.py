"""Pure NumPy implementations of the compiled kernels in ``_core.pyx``."""

from __future__ import annotations

import math

import numpy as np


def _candidates(vals: np.ndarray, max_candidates: int) -> np.ndarray:
    n = len(vals)
    top = vals[-1]
    change = vals[:-1] != vals[1:]
    if int(change.sum()) <= max_candidates:
        return vals[:-1][change]
    picked = []
    for k in range(1, max_candidates + 1):
        val = vals[(k * n) // (max_candidates + 1)]
        if val >= top or (picked and val == picked[-1]):
            continue
        picked.append(val)
    return np.array(picked, dtype=np.float64)


def best_split(X, rows, y, n_classes, columns, max_features, max_candidates, xlogx):
    """Return (column, threshold, score) of the lowest-score split or (-1, 0, inf)."""
    rows = np.asarray(rows)
    y_node = np.asarray(y)[rows]
    n = len(rows)
    total = np.bincount(y_node, minlength=n_classes)
    best = (-1, 0.0, math.inf)
    examined = 0
    for col in columns:
        if examined >= max_features:
            break
        x = X[rows, col]
        vals = np.sort(x)
        if vals[0] == vals[-1]:
            continue
        examined += 1
        cands = _candidates(vals, max_candidates)
        q = len(cands)
        if q == 0:
            continue
        b = np.searchsorted(cands, x, side="left")
        hist = np.bincount(b * n_classes + y_node, minlength=(q + 1) * n_classes)
        left = np.cumsum(hist.reshape(q + 1, n_classes)[:q], axis=0)
        right = total[None, :] - left
        nl = left.sum(axis=1)
        nr = n - nl
        # class-by-class accumulation keeps the summation order of the C loop
        sl = np.zeros(q)
        sr = np.zeros(q)
        for k in range(n_classes):
            sl += xlogx[left[:, k]]
        for k in range(n_classes):
            sr += xlogx[right[:, k]]
        score = (xlogx[nl] - sl) + (xlogx[nr] - sr)
        i = int(np.argmin(score))
        if score[i] < best[2]:
            best = (int(col), float(cands[i]), float(score[i]))
    return best


def pegasos_linear(V, scale, norm2, indptr, indices, data, ysign, order, lam):
    """One-vs-all Pegasos over CSR rows; weights are held as scale[k] * V[k]."""
    radius2 = 1.0 / lam
    for t, i in enumerate(order):
        step = float(t + 1)
        eta = 1.0 / (lam * step)
        shrink = 1.0 - 1.0 / step
        cols = indices[indptr[i]:indptr[i + 1]]
        vals = data[indptr[i]:indptr[i + 1]]
        xx = float(vals @ vals)
        yk = ysign[i]
        s = (V[:, cols] @ vals) * scale
        violated = yk * s < 1.0
        if t == 0:
            V[:] = 0.0
            scale[:] = 1.0
            norm2[:] = 0.0
            s[:] = 0.0
            violated[:] = True
        else:
            scale *= shrink
            norm2 *= shrink * shrink
            s *= shrink
        if violated.any():
            ks = np.flatnonzero(violated)
            c = eta * yk[ks] / scale[ks]
            V[np.ix_(ks, cols)] += c[:, None] * vals[None, :]
            norm2[ks] += 2.0 * eta * yk[ks] * s[ks] + eta * eta * xx
        over = norm2 > radius2
        if over.any():
            f = np.sqrt(radius2 / norm2[over])
            scale[over] *= f
            norm2[over] *= f * f
        tiny = scale < 1e-8
        if tiny.any():
            V[tiny] *= scale[tiny, None]
            scale[tiny] = 1.0


def csr_rows_dot(indptr, indices, data, rows, ST, n_cols):
    """out[r, s] = sum_p data[p] * ST[indices[p], s] over the CSR entries of rows[r]."""
    out = np.zeros((len(rows), n_cols))
    for r, i in enumerate(rows):
        lo, hi = indptr[i], indptr[i + 1]
        out[r] = data[lo:hi] @ ST[indices[lo:hi], :n_cols]
    return out
