# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: split search, linear Pegasos, sparse-row products.

Semantics mirror ``_fallback.py`` exactly; split scores are accumulated in the
same order so both backends grow identical trees.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt
from libc.stdlib cimport qsort, malloc, free

cnp.import_array()

ctypedef cnp.intp_t intp

# above this node size NumPy's vectorised sort beats qsort's callback compare
cdef intp NUMPY_SORT_MIN = 512


cdef int _cmp_double(const void* a, const void* b) noexcept nogil:
    cdef double x = (<const double*>a)[0]
    cdef double y = (<const double*>b)[0]
    if x < y:
        return -1
    if x > y:
        return 1
    return 0


cdef inline intp _lower_bound(const double* cands, intp q, double x) noexcept nogil:
    # number of candidates strictly below x
    cdef intp lo = 0, hi = q, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if cands[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


def best_split(
    const double[:, ::1] X,
    const intp[::1] rows,
    const intp[::1] y,
    intp n_classes,
    const intp[::1] columns,
    intp max_features,
    intp max_candidates,
    const double[::1] xlogx,
):
    """Return (column, threshold, score) of the lowest-score split or (-1, 0, inf)."""
    cdef intp n = rows.shape[0]
    cdef intp n_cols = columns.shape[0]
    cdef intp examined = 0
    cdef intp best_col = -1
    cdef double best_thr = 0.0
    cdef double best_score = np.inf
    cdef intp ci, col, r, k, i, q, pos, b, n_unique, nl, nr
    cdef double val, last, sl, sr, score

    vals_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] vals_view = vals_arr
    cdef double* vals = &vals_view[0] if n > 0 else NULL
    cdef double* cands = <double*>malloc((max_candidates + 1) * sizeof(double))
    cdef intp* hist = <intp*>malloc((max_candidates + 1) * n_classes * sizeof(intp))
    cdef intp* left = <intp*>malloc(n_classes * sizeof(intp))
    cdef intp* total = <intp*>malloc(n_classes * sizeof(intp))
    if cands == NULL or hist == NULL or left == NULL or total == NULL:
        free(cands); free(hist); free(left); free(total)
        raise MemoryError()

    try:
        for k in range(n_classes):
            total[k] = 0
        for i in range(n):
            total[y[rows[i]]] += 1

        for ci in range(n_cols):
            if examined >= max_features:
                break
            col = columns[ci]
            for i in range(n):
                vals[i] = X[rows[i], col]
            if n >= NUMPY_SORT_MIN:
                vals_arr.sort()
            else:
                qsort(vals, n, sizeof(double), _cmp_double)
            if vals[0] == vals[n - 1]:
                continue
            examined += 1

            n_unique = 1
            for i in range(1, n):
                if vals[i] != vals[i - 1]:
                    n_unique += 1
            q = 0
            if n_unique - 1 <= max_candidates:
                for i in range(n - 1):
                    if vals[i] != vals[i + 1]:
                        cands[q] = vals[i]
                        q += 1
            else:
                for k in range(1, max_candidates + 1):
                    pos = (k * n) // (max_candidates + 1)
                    val = vals[pos]
                    if val >= vals[n - 1]:
                        continue
                    if q > 0 and val == cands[q - 1]:
                        continue
                    cands[q] = val
                    q += 1
            if q == 0:
                continue

            for i in range((q + 1) * n_classes):
                hist[i] = 0
            for i in range(n):
                r = rows[i]
                b = _lower_bound(cands, q, X[r, col])
                hist[b * n_classes + y[r]] += 1

            for k in range(n_classes):
                left[k] = 0
            nl = 0
            for i in range(q):
                for k in range(n_classes):
                    left[k] += hist[i * n_classes + k]
                    nl += hist[i * n_classes + k]
                nr = n - nl
                sl = 0.0
                for k in range(n_classes):
                    sl += xlogx[left[k]]
                sr = 0.0
                for k in range(n_classes):
                    sr += xlogx[total[k] - left[k]]
                score = (xlogx[nl] - sl) + (xlogx[nr] - sr)
                if score < best_score:
                    best_score = score
                    best_col = col
                    best_thr = cands[i]
    finally:
        free(cands); free(hist); free(left); free(total)

    return best_col, best_thr, best_score


def pegasos_linear(
    double[:, ::1] V,
    double[::1] scale,
    double[::1] norm2,
    const intp[::1] indptr,
    const intp[::1] indices,
    const double[::1] data,
    const double[:, ::1] ysign,
    const intp[::1] order,
    double lam,
):
    """One-vs-all Pegasos over CSR rows; weights are held as scale[k] * V[k]."""
    cdef intp n_classes = V.shape[0]
    cdef intp d = V.shape[1]
    cdef intp T = order.shape[0]
    cdef intp t, i, k, p, start, stop, j
    cdef double step, eta, shrink, s, yk, c, xx, f
    cdef bint violated
    cdef double radius2 = 1.0 / lam

    with nogil:
        for t in range(T):
            i = order[t]
            step = <double>(t + 1)
            eta = 1.0 / (lam * step)
            shrink = 1.0 - 1.0 / step
            start = indptr[i]
            stop = indptr[i + 1]
            xx = 0.0
            for p in range(start, stop):
                xx += data[p] * data[p]
            for k in range(n_classes):
                s = 0.0
                for p in range(start, stop):
                    s += V[k, indices[p]] * data[p]
                s *= scale[k]
                yk = ysign[i, k]
                violated = yk * s < 1.0
                if t == 0:
                    # first step wipes the iterate: w_1 = 0 after shrink
                    for j in range(d):
                        V[k, j] = 0.0
                    scale[k] = 1.0
                    norm2[k] = 0.0
                    s = 0.0
                    violated = True
                else:
                    scale[k] *= shrink
                    norm2[k] *= shrink * shrink
                    s *= shrink
                if violated:
                    c = eta * yk / scale[k]
                    for p in range(start, stop):
                        V[k, indices[p]] += c * data[p]
                    norm2[k] += 2.0 * eta * yk * s + eta * eta * xx
                if norm2[k] > radius2:
                    f = sqrt(radius2 / norm2[k])
                    scale[k] *= f
                    norm2[k] *= f * f
                if scale[k] < 1e-8:
                    for j in range(d):
                        V[k, j] *= scale[k]
                    scale[k] = 1.0


def csr_rows_dot(
    const intp[::1] indptr,
    const intp[::1] indices,
    const double[::1] data,
    const intp[::1] rows,
    const double[:, ::1] ST,
    intp n_cols,
):
    """out[r, s] = sum_p data[p] * ST[indices[p], s] over the CSR entries of rows[r]."""
    cdef intp n_rows = rows.shape[0]
    cdef intp r, p, s
    cdef double v
    cdef double* o
    cdef const double* st
    out_arr = np.zeros((n_rows, n_cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    if n_rows == 0 or n_cols == 0:
        return out_arr
    with nogil:
        for r in range(n_rows):
            o = &out[r, 0]
            for p in range(indptr[rows[r]], indptr[rows[r] + 1]):
                v = data[p]
                st = &ST[indices[p], 0]
                for s in range(n_cols):
                    o[s] += v * st[s]
    return out_arr
