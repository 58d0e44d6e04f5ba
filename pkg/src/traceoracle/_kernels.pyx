# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled agglomerative clustering kernel; same rules as the numpy fallback."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, fabs

cnp.import_array()

DEF TIE_RTOL = 1e-9


cdef inline void _refresh(double[:, ::1] D, double[::1] rowmin, long long[::1] rowarg,
                          Py_ssize_t k, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t c
    cdef double best = INFINITY
    cdef long long arg = -1
    for c in range(k + 1, n):
        if D[k, c] < best:
            best = D[k, c]
            arg = c
    if arg == -1 and k + 1 < n:
        arg = k + 1
    rowmin[k] = best
    rowarg[k] = arg


def agglomerate(dist, int linkage):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] Da = np.array(dist, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t n = Da.shape[0]
    if Da.shape[1] != n:
        raise ValueError("distance matrix must be square")
    if linkage not in (0, 1, 2):
        raise ValueError(f"unknown linkage code {linkage}")
    pairs_a = np.zeros((max(n - 1, 0), 2), dtype=np.int64)
    heights_a = np.zeros(max(n - 1, 0))
    if n < 2:
        return pairs_a, heights_a
    cdef double[:, ::1] D = Da
    cdef long long[:, ::1] pairs = pairs_a
    cdef double[::1] heights = heights_a
    cdef double[::1] size = np.ones(n)
    cdef double[::1] rowmin = np.full(n, INFINITY)
    cdef long long[::1] rowarg = np.full(n, -1, dtype=np.int64)
    cdef Py_ssize_t i, j, k, step
    cdef double m, thr, a, b, v, si, sj

    with nogil:
        for k in range(n):
            D[k, k] = INFINITY
        for k in range(n):
            _refresh(D, rowmin, rowarg, k, n)
        for step in range(n - 1):
            m = INFINITY
            for k in range(n):
                if rowmin[k] < m:
                    m = rowmin[k]
            thr = m + TIE_RTOL * fabs(m)
            i = 0
            while not (rowmin[i] <= thr):
                i += 1
            j = i + 1
            while not (D[i, j] <= thr):
                j += 1
            pairs[step, 0] = i
            pairs[step, 1] = j
            heights[step] = D[i, j]
            si = size[i]
            sj = size[j]
            for k in range(n):
                if k == i or k == j:
                    continue
                a = D[i, k]
                b = D[j, k]
                if linkage == 0:
                    v = a if a < b else b
                elif linkage == 2:
                    v = a if a > b else b
                else:
                    v = (si * a + sj * b) / (si + sj)
                D[i, k] = v
                D[k, i] = v
            for k in range(n):
                D[j, k] = INFINITY
                D[k, j] = INFINITY
            D[i, i] = INFINITY
            size[i] = si + sj
            rowmin[j] = INFINITY
            rowarg[j] = -1
            _refresh(D, rowmin, rowarg, i, n)
            for k in range(n):
                if k != i and (rowarg[k] == i or rowarg[k] == j):
                    _refresh(D, rowmin, rowarg, k, n)
                elif k < i and D[k, i] < rowmin[k]:
                    rowmin[k] = D[k, i]
                    rowarg[k] = i
    return pairs_a, heights_a
