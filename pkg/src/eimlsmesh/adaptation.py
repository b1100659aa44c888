"""Fixed-point loop alternating field sampling, metric construction and remeshing.

Each iteration evaluates the truncated EIMLS field once at the current
nodes, builds the node-budgeted target metric from it, and remeshes while
carrying the field and the metric by interpolation.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_box, check_count, check_positive
from .eimls import EimlsConfig, EimlsField
from .isosurface import extract_contour_2d, extract_surface_3d, polyline_area, polyline_length
from .mesh import SimplicialMesh, generate_box_mesh, interpolate
from .metric import default_bounds, metric_edge_lengths, target_metric
from .pointcloud import OrientedPointCloud
from .remesh import AdaptOptions, adapt

logger = logging.getLogger(__name__)

FIELD = "alpha"


@dataclass
class IterationStats:
    iteration: int
    n_nodes: int
    n_elements: int
    length_min: float
    length_median: float
    length_max: float
    fraction_in_range: float
    level_set_size: float
    enclosed_area: float
    n_components: int
    error_level: float
    budget_used: float
    seconds: float

    def as_dict(self):
        return asdict(self)


STATS_COLUMNS = tuple(IterationStats.__dataclass_fields__)


@dataclass
class AdaptationResult:
    mesh: SimplicialMesh
    alpha: np.ndarray
    history: list
    field: EimlsField


def default_domain(cloud: OrientedPointCloud, pad=0.5):
    """Bounding box of the cloud grown by ``pad`` times its extent on every side."""
    lo, hi = cloud.bounding_box
    ext = hi - lo
    ext = np.where(ext > 0, ext, max(float(ext.max()), 1.0))
    return lo - pad * ext, hi + pad * ext


def level_set_stats(mesh: SimplicialMesh, values):
    """(size, enclosed area, component count) of the zero level set.

    Size is the contour length in 2D and the surface area in 3D; the enclosed
    area is only defined in 2D (NaN in 3D).
    """
    if mesh.dim == 2:
        lines = extract_contour_2d(mesh, values)
        return polyline_length(lines), polyline_area(lines), len(lines)
    surf = extract_surface_3d(mesh, values)
    return surf.area(), float("nan"), int(surf.triangles.shape[0] > 0)


def _row(iteration, mesh, alpha, metric, data, options, budget, t0):
    lengths = metric_edge_lengths(mesh, metric.tensors)
    size, area, comps = level_set_stats(mesh, alpha)
    inside = (lengths >= options.collapse_threshold) & (lengths <= options.split_threshold)
    return IterationStats(
        iteration, mesh.n_nodes, mesh.n_elements,
        float(lengths.min()), float(np.median(lengths)), float(lengths.max()),
        float(inside.mean()), float(size), float(area), comps,
        float(data.error_level), float(budget), time.perf_counter() - t0)


def adaptation_loop(cloud: OrientedPointCloud, config: EimlsConfig, budget, iterations,
                    domain=None, init_h=None, options=None, bounds=None,
                    interpolated_final=False, callback=None, workers=1,
                    budget_feedback=0.5) -> AdaptationResult:
    """Adapt a mesh of ``domain`` to the zero level set of the cloud's EIMLS field.

    Parameters
    ----------
    cloud : oriented cloud with normals
    config : EIMLS parameters; ``epsilon`` must be set
    budget : target node count N
    iterations : number of metric/remesh rounds (0 returns the initial mesh)
    domain : (lo, hi) box; defaults to the padded cloud bounding box
    init_h : spacing of the initial structured mesh; defaults to 1/40 of the
        longest domain side, coarsened if needed so the initial mesh has no
        more than about ``budget`` nodes
    bounds : (h_min, h_max, ratio_max); defaults to (h0/4, diag/4, 100)
    interpolated_final : if True, return the interpolated field carried
        through the last remesh instead of a fresh evaluation at the final nodes
    callback : called as ``callback(iteration, mesh)`` after every iteration
        and once for the initial mesh (iteration 0)
    budget_feedback : damping exponent of the budget correction. The
        node-count estimate behind the target metric is only approximate, so
        the budget handed to it is rescaled every iteration by
        ``(N / nodes) ** budget_feedback``. 0 disables the correction.

    Returns
    -------
    AdaptationResult with ``history`` holding ``iterations + 1`` IterationStats
    rows, the first describing the initial mesh.
    """
    if config.epsilon is None:
        raise ValueError("the adaptation loop needs a truncation width epsilon")
    budget = check_count(budget, "budget", minimum=100)
    iterations = check_count(iterations, "iterations", minimum=0)
    if cloud.normals is None:
        raise ValueError("the cloud has no normals")
    if domain is None:
        domain = default_domain(cloud)
    lo, hi = check_box(domain[0], domain[1], cloud.dim)
    if init_h is None:
        init_h = max(float((hi - lo).max()) / 40.0, float(np.prod(hi - lo) / budget) ** (1.0 / cloud.dim))
    init_h = check_positive(init_h, "init_h")
    options = options or AdaptOptions()

    field = EimlsField(cloud, config, workers=workers)
    mesh = generate_box_mesh(lo, hi, init_h)
    if bounds is None:
        bounds = default_bounds(mesh, config.h0)
    h_min, h_max, ratio = bounds

    t0 = time.perf_counter()
    alpha = field.eval_truncated(mesh.nodes)
    effective = float(budget)
    metric, data = target_metric(mesh, alpha, effective, h_min, h_max, ratio)
    history = [_row(0, mesh, alpha, metric, data, options, effective, t0)]
    mesh.set_field(FIELD, alpha)
    if callback is not None:
        callback(0, mesh)

    for it in range(1, iterations + 1):
        t0 = time.perf_counter()
        new, stats = adapt(mesh, metric, [FIELD], options, bounds=bounds)
        carried = new.fields[FIELD]
        alpha = field.eval_truncated(new.nodes)
        if budget_feedback:
            factor = (budget / new.n_nodes) ** budget_feedback
            effective = float(np.clip(effective * factor, budget / 4.0, budget * 4.0))
        metric, data = target_metric(new, alpha, effective, h_min, h_max, ratio)
        mesh = new
        mesh.set_field(FIELD, carried if (interpolated_final and it == iterations) else alpha)
        history.append(_row(it, mesh, mesh.fields[FIELD], metric, data, options, effective, t0))
        logger.info("iteration %d: %d nodes, %d sweeps", it, mesh.n_nodes, stats.sweeps)
        if callback is not None:
            callback(it, mesh)
    return AdaptationResult(mesh, mesh.fields[FIELD].copy(), history, field)


class MeshAdapter(BaseEstimator):
    """Estimator wrapper around the adaptation loop.

    >>> from eimlsmesh.datasets import circle_cloud
    >>> est = MeshAdapter(h0=0.02, epsilon=0.02, n_nodes=600, iterations=2).fit(circle_cloud(128))
    >>> len(est.history_)
    3
    """

    def __init__(self, h0=0.003, epsilon=0.002, gamma=7.0, k=80, n_nodes=5000, iterations=10,
                 domain=None, init_h=None, kernel="gaussian"):
        self.h0 = h0
        self.epsilon = epsilon
        self.gamma = gamma
        self.k = k
        self.n_nodes = n_nodes
        self.iterations = iterations
        self.domain = domain
        self.init_h = init_h
        self.kernel = kernel

    def fit(self, X, normals=None):
        cloud = X if isinstance(X, OrientedPointCloud) else OrientedPointCloud(X, normals)
        config = EimlsConfig(self.h0, self.gamma, self.k, self.epsilon, self.kernel)
        res = adaptation_loop(cloud, config, self.n_nodes, self.iterations,
                              domain=self.domain, init_h=self.init_h)
        self.mesh_ = res.mesh
        self.alpha_ = res.alpha
        self.history_ = res.history
        return self

    def predict(self, X):
        """Truncated field interpolated from the adapted mesh."""
        return interpolate(self.mesh_, FIELD, X)
