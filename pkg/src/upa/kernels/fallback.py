"""NumPy/SciPy implementations of the hot kernels.

These are the reference lane: the compiled Cython lane must reproduce
them (exactly for index-valued kernels, to float tolerance for the
attention aggregation). Neighbor ordering is always by squared distance
with ties broken by lower point index, so results are deterministic and
identical across lanes.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

_CHUNK_ELEMS = 2 ** 24  # bound on temporaries in the brute-force path


def _pairwise_d2(queries, points):
    # (q - p)**2 summed over xyz, same arithmetic in every lane
    return ((queries[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)


def knn_brute(points, queries, k):
    """Exact k nearest neighbors by full distance enumeration.

    Returns (M, k) int64 indices sorted by (squared distance, index).
    Selection uses argpartition with an explicit fixup for rows where an
    exact distance tie straddles the k-th position, so the lower-index
    tie-break always holds.
    """
    n = points.shape[0]
    m = queries.shape[0]
    out = np.empty((m, k), dtype=np.int64)
    rows_per_chunk = max(1, _CHUNK_ELEMS // max(1, n))
    for lo in range(0, m, rows_per_chunk):
        hi = min(m, lo + rows_per_chunk)
        d2 = _pairwise_d2(queries[lo:hi], points)
        rows = np.arange(hi - lo)[:, None]
        if k < n:
            part = np.argpartition(d2, k - 1, axis=1)[:, :k]
            sel = d2[rows, part]
            thresh = sel.max(axis=1)
            ambiguous = np.flatnonzero((d2 <= thresh[:, None]).sum(axis=1) > k)
            order = np.lexsort((part, sel), axis=1)
            chunk = part[rows, order]
            for r in ambiguous:  # boundary tie: resolve by full stable sort
                chunk[r] = np.argsort(d2[r], kind="stable")[:k]
            out[lo:hi] = chunk
        else:
            out[lo:hi] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def knn_kdtree(points, queries, k):
    """Exact k nearest neighbors through a kd-tree.

    The tree proposes candidates; squared distances are recomputed with
    the brute-force arithmetic and re-sorted by (d2, index). When a tie
    straddles the k-th position the candidate set is enlarged until the
    boundary is unambiguous, so the result matches knn_brute exactly.
    """
    n = points.shape[0]
    tree = cKDTree(points)
    kq = min(n, k + 1)
    while True:
        _, idx = tree.query(queries, k=kq)
        idx = np.atleast_2d(idx)
        if idx.shape[0] != queries.shape[0]:  # kq == 1 returns (M,)
            idx = idx.reshape(queries.shape[0], -1)
        d2 = ((points[idx] - queries[:, None, :]) ** 2).sum(axis=2)
        order = np.lexsort((idx, d2), axis=1)
        rows = np.arange(queries.shape[0])[:, None]
        d2s = d2[rows, order]
        if kq == n or not np.any(d2s[:, k - 1] == d2s[:, k]):
            return idx[rows, order[:, :k]].astype(np.int64)
        kq = min(n, kq * 2)


def fps(points, m, start):
    """Greedy farthest-point selection of m indices, beginning at start.

    Ties in the max-min distance go to the lowest index (np.argmax).
    """
    n = points.shape[0]
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = start
    mind2 = ((points - points[start]) ** 2).sum(axis=1)
    for i in range(1, m):
        nxt = int(np.argmax(mind2))
        chosen[i] = nxt
        d2 = ((points - points[nxt]) ** 2).sum(axis=1)
        np.minimum(mind2, d2, out=mind2)
    return chosen


def attend(scores, values, idx, heads, out=None):
    """Multi-head softmax aggregation over neighbor sets.

    scores: (M, k, h) raw attention scores
    values: (N, d) per-point value features, d divisible by h
    idx:    (M, k) neighbor indices into values
    Returns (M, d): per head, softmax over k weights the head's value
    slice; head outputs are concatenated.
    """
    m, k, h = scores.shape
    d = values.shape[1]
    dh = d // h
    shifted = scores - scores.max(axis=1, keepdims=True)
    w = np.exp(shifted)
    w /= w.sum(axis=1, keepdims=True)
    gathered = values[idx].reshape(m, k, h, dh)
    result = np.einsum("mkh,mkhd->mhd", w, gathered).reshape(m, d)
    if out is not None:
        out[...] = result
        return out
    return result
