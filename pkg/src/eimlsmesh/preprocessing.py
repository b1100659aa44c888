"""Point cloud cleaning: density outliers, grazing returns, subsampling, normals.

Each step exists both as a plain function returning ``(cloud, n_removed)``
(or just the cloud) and as a scikit-learn style transformer so the steps can
be chained in a :class:`sklearn.pipeline.Pipeline`.
"""

from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_count, check_positive
from .pointcloud import OrientedPointCloud
from .spatial import NeighborIndex

logger = logging.getLogger(__name__)


class DegenerateNeighborhoodError(ValueError):
    """A point's neighbourhood has zero covariance, so no normal exists."""

    def __init__(self, index):
        self.index = int(index)
        super().__init__(
            f"degenerate neighbourhood (zero covariance) at point {self.index}; increase k"
        )


def kth_neighbor_distance(cloud, k):
    """Distance from every point to its k-th nearest *other* point."""
    index = NeighborIndex(cloud.points)
    _, d2 = index.query(cloud.points, k + 1)
    return np.sqrt(d2[:, k])


def remove_outliers_density(cloud: OrientedPointCloud, k=3, max_dist=0.30):
    """Drop points whose k-th nearest neighbour is farther than ``max_dist``.

    The filter is repeated on the survivors until nothing more is removed, so
    the result is a fixed point: every survivor has its k-th neighbour within
    ``max_dist`` among the survivors, and a second call removes nothing.

    Returns
    -------
    cloud : OrientedPointCloud
    n_removed : int
    """
    k = check_count(k, "k")
    max_dist = check_positive(max_dist, "max_dist")
    if k >= cloud.n_points:
        raise ValueError(f"k={k} must be smaller than the point count ({cloud.n_points})")
    keep = np.arange(cloud.n_points)
    while keep.size > k:
        dist = kth_neighbor_distance(cloud.subset(keep), k)
        ok = dist <= max_dist
        if ok.all():
            break
        keep = keep[ok]
    if keep.size <= k:
        keep = keep[:0]
    return cloud.subset(keep), cloud.n_points - keep.size


def grazing_angles(cloud: OrientedPointCloud) -> np.ndarray:
    """Angle in degrees between each laser ray and the local tangent plane.

    90 means the ray hits the surface head-on; 0 means it skims along it.
    The value does not depend on the sign of the normal.
    """
    if cloud.normals is None:
        raise ValueError("grazing filter needs normals")
    if cloud.scan_origins is None:
        raise ValueError("grazing filter needs scan origins")
    ray = cloud.origins_per_point() - cloud.points
    length = np.linalg.norm(ray, axis=1)
    cosang = np.abs(np.einsum("ij,ij->i", cloud.normals, ray))
    with np.errstate(invalid="ignore", divide="ignore"):
        cosang = np.where(length > 0, cosang / length, 1.0)
    return np.degrees(np.arcsin(np.clip(cosang, 0.0, 1.0)))


def remove_grazing(cloud: OrientedPointCloud, min_angle=2.0):
    """Drop points seen under a grazing angle smaller than ``min_angle`` degrees.

    Returns ``(cloud, n_removed)``.
    """
    min_angle = check_positive(min_angle, "min_angle", strict=False)
    if min_angle >= 90:
        raise ValueError("min_angle must be below 90 degrees")
    keep = grazing_angles(cloud) >= min_angle
    return cloud.subset(keep), int((~keep).sum())


def octree_leaf_keys(points, leaf_size):
    """Integer leaf coordinates of each point in an octree with leaf edge ``leaf_size``.

    The octree root is aligned on multiples of ``leaf_size`` so leaves are
    exactly the cells ``floor(p / leaf_size)``.
    """
    return np.floor(points / leaf_size).astype(np.int64)


def subsample_octree(cloud: OrientedPointCloud, leaf_size=0.02) -> OrientedPointCloud:
    """Keep one measured point per occupied octree leaf.

    The kept point is the input point closest to the centroid of the points
    falling in the leaf (lowest index on ties). Input order is preserved.
    """
    leaf_size = check_positive(leaf_size, "leaf_size")
    if cloud.is_empty:
        return cloud
    pts = cloud.points
    keys = octree_leaf_keys(pts, leaf_size)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    n_leaves = counts.shape[0]
    centroids = np.zeros((n_leaves, cloud.dim))
    np.add.at(centroids, inverse, pts)
    centroids /= counts[:, None]
    d2 = ((pts - centroids[inverse]) ** 2).sum(axis=1)
    order = np.lexsort((np.arange(len(pts)), d2, inverse))
    first = np.ones(len(order), dtype=bool)
    first[1:] = inverse[order[1:]] != inverse[order[:-1]]
    chosen = np.sort(order[first])
    return cloud.subset(chosen)


def estimate_normals(cloud: OrientedPointCloud, k=100, chunk_size=20000) -> OrientedPointCloud:
    """PCA normals: smallest-eigenvalue eigenvector of each k-neighbourhood covariance.

    With scan origins the normals are turned toward the scanner; without them
    the sign is left as computed and the cloud is flagged ``oriented=False``.
    """
    k = check_count(k, "k", minimum=cloud.dim + 1)
    if cloud.n_points < k:
        raise ValueError(f"need at least k={k} points, got {cloud.n_points}")
    index = NeighborIndex(cloud.points)
    pts = cloud.points
    normals = np.empty_like(pts)
    for start in range(0, len(pts), chunk_size):
        stop = min(start + chunk_size, len(pts))
        nbr, _ = index.query(pts[start:stop], k)
        local = pts[nbr]
        local = local - local.mean(axis=1, keepdims=True)
        cov = np.einsum("nki,nkj->nij", local, local) / k
        scale = np.einsum("nii->n", cov)
        bad = np.flatnonzero(scale <= 0)
        if bad.size:
            raise DegenerateNeighborhoodError(start + bad[0])
        _, vecs = np.linalg.eigh(cov)
        normals[start:stop] = vecs[:, :, 0]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)

    oriented = cloud.scan_origins is not None
    if oriented:
        toward = np.einsum("ij,ij->i", normals, cloud.origins_per_point() - pts)
        normals[toward < 0] *= -1
    else:
        logger.info("no scan origins: normals left unoriented")
    return cloud.with_normals(normals, oriented=oriented)


class _CloudFilter(TransformerMixin, BaseEstimator):
    """Shared fit/transform plumbing for the cloud-to-cloud steps."""

    def fit(self, cloud, y=None):
        self._apply(cloud)
        return self

    def transform(self, cloud):
        return self._apply(cloud)

    def fit_transform(self, cloud, y=None, **fit_params):
        return self._apply(cloud)

    def _apply(self, cloud):
        raise NotImplementedError


class DensityOutlierFilter(_CloudFilter):
    """Transformer wrapper for :func:`remove_outliers_density`."""

    def __init__(self, k=3, max_dist=0.30):
        self.k = k
        self.max_dist = max_dist

    def _apply(self, cloud):
        out, self.n_removed_ = remove_outliers_density(cloud, self.k, self.max_dist)
        return out


class GrazingAngleFilter(_CloudFilter):
    """Transformer wrapper for :func:`remove_grazing`."""

    def __init__(self, min_angle=2.0):
        self.min_angle = min_angle

    def _apply(self, cloud):
        if cloud.normals is None or cloud.scan_origins is None:
            # nothing to judge the incidence with; the step is a no-op
            self.n_removed_ = 0
            self.skipped_ = True
            return cloud
        self.skipped_ = False
        out, self.n_removed_ = remove_grazing(cloud, self.min_angle)
        return out


class OctreeSubsampler(_CloudFilter):
    """Transformer wrapper for :func:`subsample_octree`."""

    def __init__(self, leaf_size=0.02):
        self.leaf_size = leaf_size

    def _apply(self, cloud):
        out = subsample_octree(cloud, self.leaf_size)
        self.n_removed_ = cloud.n_points - out.n_points
        return out


class PCANormalEstimator(_CloudFilter):
    """Transformer wrapper for :func:`estimate_normals`."""

    def __init__(self, k=100):
        self.k = k

    def _apply(self, cloud):
        self.n_removed_ = 0
        return estimate_normals(cloud, self.k)
