"""Maximum-weight assignment via the Kuhn-Munkres (Hungarian) method.

Rectangular inputs are padded to a square matrix with zero-weight dummy
vertices; dummy matches are dropped from the result, which leaves the
maximum-weight assignment of the smaller side onto the larger one.
"""

from __future__ import annotations

import numpy as np


def _hungarian_min(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost perfect matching on a square matrix (potentials method).

    Returns ``p`` with ``p[j]`` = 1-based row matched to 1-based column j.
    """
    n = cost.shape[0]
    a = np.zeros((n + 1, n + 1))
    a[1:, 1:] = cost
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = a[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            masked = np.where(free, minv, np.inf)
            j1 = int(np.argmin(masked[1:])) + 1
            delta = masked[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = int(way[j0])
            p[j0] = p[j1]
            j0 = j1
    return p


def kuhn_munkres(weights) -> list[tuple[int, int]]:
    """Maximum-weight assignment pairs (row, col) for a weight matrix.

    Every vertex of the smaller side is matched; weights may be negative.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError("weight matrix must be 2-dimensional")
    nr, nc = w.shape
    if nr == 0 or nc == 0:
        return []
    transposed = nr > nc
    if transposed:
        w = w.T
        nr, nc = nc, nr
    square = np.zeros((nc, nc))
    square[:nr, :] = w
    p = _hungarian_min(-square)
    pairs = []
    for j in range(1, nc + 1):
        i = int(p[j]) - 1
        if i < nr:
            pairs.append((j - 1, i) if transposed else (i, j - 1))
    return sorted(pairs)


def assignment_weight(weights, pairs: list[tuple[int, int]]) -> float:
    w = np.asarray(weights, dtype=np.float64)
    return float(sum(w[i, j] for i, j in pairs))
