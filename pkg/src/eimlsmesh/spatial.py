"""Exact k-nearest-neighbour queries over a point set.

The kd-tree itself is scipy's ``cKDTree``. On top of it this module enforces
a fully deterministic answer: neighbours are ordered by squared Euclidean
distance computed as ``((p - x) ** 2).sum()`` and ties are broken by the
lowest point index, which is exactly what a brute-force sort returns.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from ._validation import check_count, check_points

# Relative slack on distances reported by cKDTree before a candidate list
# is trusted to contain the exact k nearest points.
_REL_SLACK = 1e-9


class NeighborIndex:
    """Immutable kd-tree over ``points`` answering exact kNN queries."""

    def __init__(self, points, leafsize=16):
        self.points = check_points(points, name="points")
        self.points.setflags(write=False)
        self.leafsize = check_count(leafsize, "leafsize")
        self._tree = cKDTree(self.points, leafsize=self.leafsize, balanced_tree=True)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def query(self, X, k, workers=1):
        """Batch kNN.

        Returns ``(indices, sq_dists)``, both of shape (m, k), rows sorted by
        ascending squared distance then ascending index.
        """
        X = check_points(X, dim=self.dim, name="query points", allow_empty=True)
        n = self.n_points
        k = check_count(k, "k")
        if k > n:
            raise ValueError(f"k={k} exceeds the number of indexed points ({n})")
        m = X.shape[0]
        if m == 0:
            return np.zeros((0, k), dtype=np.intp), np.zeros((0, k))

        kq = min(n, k + max(2, k // 4))
        _, cand = self._tree.query(X, k=kq, workers=workers)
        cand = np.asarray(cand, dtype=np.intp).reshape(m, kq)
        d2 = _sq_dist(self.points[cand], X[:, None, :])
        order = np.lexsort((cand, d2), axis=-1)
        cand = np.take_along_axis(cand, order, axis=1)
        d2 = np.take_along_axis(d2, order, axis=1)

        if kq < n:
            kth = d2[:, k - 1]
            unsafe = ~(d2[:, -1] > kth * (1.0 + _REL_SLACK) + 1e-300)
            for row in np.flatnonzero(unsafe):
                cand_row, d2_row = self._exact_row(X[row], k, kth[row])
                cand[row, :k] = cand_row
                d2[row, :k] = d2_row
        return cand[:, :k].copy(), d2[:, :k].copy()

    def _exact_row(self, x, k, kth_d2):
        # the kq-th candidate ties with the k-th: widen to a ball that
        # certainly holds every point within the k-th distance
        radius = np.sqrt(kth_d2) * (1.0 + 1e-6) + 1e-300
        idx = np.asarray(self._tree.query_ball_point(x, radius), dtype=np.intp)
        d2 = _sq_dist(self.points[idx], x)
        order = np.lexsort((idx, d2))[:k]
        return idx[order], d2[order]

    def knn(self, x, k):
        """Indices and squared distances of the ``k`` nearest points to ``x``."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ValueError(f"query must have shape ({self.dim},), got {x.shape}")
        idx, d2 = self.query(x[None, :], k)
        return idx[0], d2[0]

    def nn(self, x):
        """Index of the nearest point (lowest index on ties)."""
        idx, _ = self.knn(x, 1)
        return int(idx[0])

    def nearest_distance(self, X, workers=1):
        """Euclidean distance from each row of ``X`` to its nearest point."""
        _, d2 = self.query(X, 1, workers=workers)
        return np.sqrt(d2[:, 0])


def _sq_dist(P, x):
    diff = P - x
    return (diff * diff).sum(axis=-1)


def build_index(cloud_or_points, leafsize=16) -> NeighborIndex:
    """Build a :class:`NeighborIndex` over a cloud (or raw point array)."""
    points = getattr(cloud_or_points, "points", cloud_or_points)
    if np.asarray(points).shape[0] == 0:
        raise ValueError("cannot build a neighbour index over an empty cloud")
    return NeighborIndex(points, leafsize=leafsize)


def knn(index: NeighborIndex, x, k):
    return index.knn(x, k)


def nn(index: NeighborIndex, x) -> int:
    return index.nn(x)
