"""Hot inner loops, each with a numba and a numpy implementation.

The public names dispatch to the numba version unless acceleration is
disabled (see :mod:`clusterfed._accel`). The ``*_numpy`` variants are always
importable so tests and the benchmark can compare the two.
"""
import numpy as np

from ._accel import HAVE_NUMBA, maybe_njit


# -- weighted sparse row accumulation -----------------------------------------

def scatter_add_rows_numpy(out, ids, rows, weights):
    """out[ids[r]] += weights[r] * rows[r], in row order."""
    # np.add.at accumulates unbuffered in index order, matching the loop below.
    np.add.at(out, ids, rows * weights[:, None])
    return out


def _scatter_add_rows_loop(out, ids, rows, weights):
    d = rows.shape[1]
    for r in range(ids.shape[0]):
        i = ids[r]
        w = weights[r]
        for c in range(d):
            out[i, c] += w * rows[r, c]
    return out


# -- nearest centroid ---------------------------------------------------------

def nearest_centroid_numpy(points, centroids):
    """Return (labels, squared distance to the assigned centroid)."""
    diff = points[:, None, :] - centroids[None, :, :]
    d2 = np.einsum("nkd,nkd->nk", diff, diff)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(points.shape[0]), labels]


def _nearest_centroid_loop(points, centroids):
    n, d = points.shape
    k = centroids.shape[0]
    labels = np.empty(n, dtype=np.int64)
    best = np.empty(n, dtype=np.float64)
    for i in range(n):
        bi = 0
        bd = np.inf
        for j in range(k):
            s = 0.0
            for c in range(d):
                diff = points[i, c] - centroids[j, c]
                s += diff * diff
            if s < bd:
                bd = s
                bi = j
        labels[i] = bi
        best[i] = bd
    return labels, best


# -- top-k by similarity within a group ---------------------------------------

def topk_rows_numpy(sim, k):
    """Per row, indices of the k largest entries excluding the diagonal.

    Ties break toward the smaller column index.
    """
    n = sim.shape[0]
    k = min(k, n - 1)
    if k <= 0:
        return np.empty((n, 0), dtype=np.int64)
    s = sim.copy()
    np.fill_diagonal(s, -np.inf)
    # stable sort on the negated values keeps ascending index among ties
    order = np.argsort(-s, axis=1, kind="stable")
    return order[:, :k].astype(np.int64)


def _topk_rows_loop(sim, k):
    n = sim.shape[0]
    if k > n - 1:
        k = n - 1
    if k < 0:
        k = 0
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        row = -sim[i].copy()
        row[i] = np.inf
        order = np.argsort(row, kind="mergesort")
        for j in range(k):
            out[i, j] = order[j]
    return out


if HAVE_NUMBA:
    scatter_add_rows = maybe_njit(_scatter_add_rows_loop)
    nearest_centroid = maybe_njit(_nearest_centroid_loop)
    topk_rows = maybe_njit(_topk_rows_loop)
else:
    scatter_add_rows = scatter_add_rows_numpy
    nearest_centroid = nearest_centroid_numpy
    topk_rows = topk_rows_numpy
