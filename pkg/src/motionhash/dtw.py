"""Dynamic time warping between multichannel frame sequences.

The DP minimizes cumulative per-frame Euclidean distance over monotone
warp paths with steps (1,1), (1,0), (0,1). Ties prefer the diagonal,
then advancing the reference, then advancing the query, which makes the
recovered path deterministic.
"""

import numpy as np
from numba import njit

# Direction codes stored during the DP sweep.
_DIAG, _REF, _QRY = 0, 1, 2


def frame_cost_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise Euclidean distance between frames of a (n,c) and b (m,c)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijc,ijc->ij", diff, diff))


@njit(cache=True)
def _dp(local: np.ndarray):
    n, m = local.shape
    cost = np.empty((n, m), dtype=np.float64)
    step = np.empty((n, m), dtype=np.uint8)
    cost[0, 0] = local[0, 0]
    step[0, 0] = 0
    for j in range(1, m):
        cost[0, j] = cost[0, j - 1] + local[0, j]
        step[0, j] = 2
    for i in range(1, n):
        cost[i, 0] = cost[i - 1, 0] + local[i, 0]
        step[i, 0] = 1
        for j in range(1, m):
            best = cost[i - 1, j - 1]
            direction = 0
            if cost[i - 1, j] < best:
                best = cost[i - 1, j]
                direction = 1
            if cost[i, j - 1] < best:
                best = cost[i, j - 1]
                direction = 2
            cost[i, j] = best + local[i, j]
            step[i, j] = direction
    return cost, step


def dtw_align(reference: np.ndarray, query: np.ndarray):
    """Align query to reference; returns (cost, path).

    cost is the minimum cumulative frame distance; path is an (L, 2)
    int array of (reference_index, query_index) pairs from (0, 0) to
    (n-1, m-1).
    """
    local = frame_cost_matrix(reference, query)
    cost, step = _dp(local)
    i, j = local.shape[0] - 1, local.shape[1] - 1
    rev = [(i, j)]
    while i > 0 or j > 0:
        s = step[i, j]
        if s == _DIAG:
            i, j = i - 1, j - 1
        elif s == _REF:
            i -= 1
        else:
            j -= 1
        rev.append((i, j))
    path = np.asarray(rev[::-1], dtype=np.int64)
    return float(cost[-1, -1]), path


def dtw_cost(a: np.ndarray, b: np.ndarray) -> float:
    """Alignment cost only (no backtrack)."""
    local = frame_cost_matrix(a, b)
    cost, _ = _dp(local)
    return float(cost[-1, -1])


def brute_force_cost(a: np.ndarray, b: np.ndarray) -> float:
    """Exhaustive minimum over every monotone warp path.

    Exponential: intended as an oracle for short sequences only.
    """
    local = frame_cost_matrix(a, b)
    n, m = local.shape
    best = [np.inf]

    def walk(i, j, acc):
        acc = acc + local[i, j]
        if i == n - 1 and j == m - 1:
            if acc < best[0]:
                best[0] = acc
            return
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, acc)
        if i + 1 < n:
            walk(i + 1, j, acc)
        if j + 1 < m:
            walk(i, j + 1, acc)

    walk(0, 0, 0.0)
    return float(best[0])
