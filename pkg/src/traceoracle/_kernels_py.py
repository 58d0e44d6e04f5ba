"""Pure-numpy agglomerative clustering kernel (fallback for the compiled one).

Both implementations follow the same rules so their merge histories are
bit-identical: Lance-Williams distance updates, a cached minimum per row over
higher-indexed columns, and ties broken toward the lexicographically smallest
``(i, j)`` slot pair among distances within ``TIE_RTOL`` of the minimum.  A
merged cluster keeps the smaller slot index, which is its smallest member.
"""
from __future__ import annotations

import numpy as np

SINGLE, AVERAGE, COMPLETE = 0, 1, 2
TIE_RTOL = 1e-9


def tie_threshold(m: float) -> float:
    return m + TIE_RTOL * abs(m)


def agglomerate(dist: np.ndarray, linkage: int) -> tuple[np.ndarray, np.ndarray]:
    """Merge all n points; returns (pairs int64[n-1, 2], heights float64[n-1])."""
    D = np.array(dist, dtype=np.float64, copy=True)
    n = D.shape[0]
    if D.shape != (n, n):
        raise ValueError("distance matrix must be square")
    if linkage not in (SINGLE, AVERAGE, COMPLETE):
        raise ValueError(f"unknown linkage code {linkage}")
    pairs = np.zeros((max(n - 1, 0), 2), dtype=np.int64)
    heights = np.zeros(max(n - 1, 0))
    if n < 2:
        return pairs, heights
    np.fill_diagonal(D, np.inf)
    size = np.ones(n)
    rowmin = np.full(n, np.inf)
    rowarg = np.full(n, -1, dtype=np.int64)

    def refresh(k):
        if k + 1 < n:
            seg = D[k, k + 1:]
            a = int(np.argmin(seg))
            rowmin[k], rowarg[k] = seg[a], k + 1 + a
        else:
            rowmin[k], rowarg[k] = np.inf, -1

    for k in range(n):
        refresh(k)

    for step in range(n - 1):
        thr = tie_threshold(rowmin.min())
        i = int(np.flatnonzero(rowmin <= thr)[0])
        j = i + 1 + int(np.flatnonzero(D[i, i + 1:] <= thr)[0])
        pairs[step] = (i, j)
        heights[step] = D[i, j]

        di, dj = D[i], D[j]
        if linkage == SINGLE:
            new = np.minimum(di, dj)
        elif linkage == COMPLETE:
            new = np.maximum(di, dj)
        else:
            new = (size[i] * di + size[j] * dj) / (size[i] + size[j])
        new[i] = new[j] = np.inf
        D[i, :] = new
        D[:, i] = new
        D[j, :] = np.inf
        D[:, j] = np.inf
        size[i] += size[j]
        rowmin[j], rowarg[j] = np.inf, -1

        refresh(i)
        for k in np.flatnonzero((rowarg == i) | (rowarg == j)):
            if k != i:
                refresh(int(k))
        below = np.arange(i)
        better = below[(new[:i] < rowmin[:i]) & (rowarg[:i] != i) & (rowarg[:i] != j)]
        rowmin[better] = new[better]
        rowarg[better] = i
    return pairs, heights
