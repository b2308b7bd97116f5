"""k-nearest-neighbour estimator of the KL divergence between two samples.

    D(P || Q) ~= d/n * sum_i log(nu_k(i) / rho_k(i)) + log(m / (n - 1))

``rho_k(i)`` is the distance from ``p_i`` to its k-th nearest neighbour in the
P-sample with ``p_i`` itself excluded; ``nu_k(i)`` is the distance to its k-th
nearest neighbour in the Q-sample. When the two samples share points (as when Q
is P with a few rows deleted) an exact zero-distance match of ``p_i`` in Q is
treated as ``p_i`` itself and skipped once. Distances are floored at 1e-12.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

DIST_FLOOR = 1e-12


def _check(p: np.ndarray, q: np.ndarray, k: int):
    if p.ndim != 2 or q.ndim != 2:
        raise ValueError("samples must be 2-D (points x dims)")
    if p.shape[1] != q.shape[1]:
        raise ValueError(f"dimension mismatch: {p.shape[1]} vs {q.shape[1]}")
    if k < 1:
        raise ValueError("k must be >= 1")
    if p.shape[0] <= k:
        raise ValueError(f"P-sample needs more than k={k} points, has {p.shape[0]}")
    if q.shape[0] < k:
        raise ValueError(f"Q-sample needs at least k={k} points, has {q.shape[0]}")


KDTREE_MAX_DIM = 8
_CHUNK = 256
_SPARE = 8


def knn_search(data: np.ndarray, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact ``k`` nearest rows of ``data`` for each query row, sorted by distance.

    Low-dimensional data goes through a kd-tree. Otherwise candidates are picked
    from the expanded squared distance and then re-measured from explicit
    differences, so identical points are always exactly 0 apart. Ties resolve
    toward the lower row index.
    """
    data = np.asarray(data, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    n = data.shape[0]
    k = min(k, n)
    if data.shape[1] <= KDTREE_MAX_DIM:
        d, i = cKDTree(data).query(queries, k=k)
        if k == 1:
            d, i = d[:, None], i[:, None]
        return d, i
    c = min(n, k + _SPARE)
    sq_data = np.einsum("ij,ij->i", data, data)
    out_d = np.empty((queries.shape[0], k))
    out_i = np.empty((queries.shape[0], k), dtype=np.int64)
    for start in range(0, queries.shape[0], _CHUNK):
        qb = queries[start : start + _CHUNK]
        rows = np.arange(qb.shape[0])[:, None]
        if c < n:
            approx = sq_data[None, :] - 2.0 * (qb @ data.T) + np.einsum("ij,ij->i", qb, qb)[:, None]
            part = np.argpartition(approx, c, axis=1)
            cand = part[:, :c]
            cutoff = approx[rows[:, 0], part[:, c]]
        else:
            cand = np.broadcast_to(np.arange(n), (qb.shape[0], n))
        diff = data[cand] - qb[:, None, :]
        exact = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        order = np.lexsort((cand, exact), axis=1)
        dist_sorted, idx_sorted = exact[rows, order], cand[rows, order]
        if c < n:
            # an excluded point could still tie or beat the k-th candidate once
            # rounding in the expansion is allowed for; rescan those rows fully
            slack = 1e-9 * (1.0 + np.abs(cutoff))
            risky = dist_sorted[:, k - 1] ** 2 >= cutoff - slack
            for r in np.flatnonzero(risky):
                full = np.sqrt(((data - qb[r]) ** 2).sum(axis=1))
                o = np.lexsort((np.arange(n), full))[:k]
                dist_sorted[r, :k], idx_sorted[r, :k] = full[o], o
        out_d[start : start + qb.shape[0]] = dist_sorted[:, :k]
        out_i[start : start + qb.shape[0]] = idx_sorted[:, :k]
    return out_d, out_i


def self_excluded_neighbours(points: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """k nearest neighbours of every row among the *other* rows (self removed by index)."""
    d, idx = knn_search(points, points, k + 1)
    n = points.shape[0]
    is_self = idx == np.arange(n)[:, None]
    # rows where self fell outside the returned list (many exact duplicates): drop the last one
    missing = ~is_self.any(axis=1)
    is_self[missing, -1] = True
    keep = ~is_self
    return d[keep].reshape(n, -1), idx[keep].reshape(n, -1)


def rho_k(p: np.ndarray, k: int) -> np.ndarray:
    d, _ = self_excluded_neighbours(p, k)
    return d[:, k - 1]


def nu_k(p: np.ndarray, q: np.ndarray, k: int) -> np.ndarray:
    d, _ = knn_search(q, p, k + 1)
    skip = d[:, 0] == 0.0
    out = np.where(skip, d[:, min(k, d.shape[1] - 1)], d[:, k - 1])
    if d.shape[1] == k:
        # Q holds exactly k points; a skipped self leaves no k-th neighbour
        out = np.where(skip, np.inf, out)
    return out


def knn_kl_estimate(sample_p: np.ndarray, sample_q: np.ndarray, k: int = 2) -> float:
    """Estimate KL(P || Q) from samples of shape (n, d) and (m, d)."""
    p = np.asarray(sample_p, dtype=np.float64)
    q = np.asarray(sample_q, dtype=np.float64)
    _check(p, q, k)
    n, d = p.shape
    m = q.shape[0]
    rho = np.maximum(rho_k(p, k), DIST_FLOOR)
    nu = np.maximum(nu_k(p, q, k), DIST_FLOOR)
    if not np.all(np.isfinite(nu)):
        raise ValueError("Q-sample too small once shared points are skipped")
    return float(d / n * np.sum(np.log(nu / rho)) + np.log(m / (n - 1)))

