"""Edge-based a-posteriori error estimation and metric construction.

Everything is computed from node stars: for node ``i`` with neighbours
``Gamma(i)`` and edge vectors ``X_ij = X_j - X_i``

* recovered gradient  ``G_i = (sum X_ij X_ij^T)^-1 sum (U_j - U_i) X_ij``
* edge error          ``e_ij = |(G_j - G_i) . X_ij|``
* unit metric         ``M_i = |Gamma(i)| / d * (sum X_ij X_ij^T)^-1``
* target metric       ``M~_i = 1/e * |Gamma(i)| / d * (sum X_ij X_ij^T / e_ij)^-1``

where the global error level ``e`` is fixed by the node budget ``N``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .mesh import MeshError, SimplicialMesh

logger = logging.getLogger(__name__)

STAR_REG = 1e-12
EDGE_ERROR_FLOOR = 1e-6
LINEAR_FIELD_TOL = 1e-14


@dataclass
class MetricField:
    """One symmetric positive-definite tensor per node, plus the clamps applied."""

    tensors: np.ndarray
    h_min: float | None = None
    h_max: float | None = None
    ratio_max: float | None = None

    def __post_init__(self):
        self.tensors = np.asarray(self.tensors, dtype=np.float64)

    def __len__(self):
        return self.tensors.shape[0]

    def eigenvalues(self):
        return np.linalg.eigvalsh(self.tensors)

    def check(self, rtol=1e-9):
        """Raise ``ValueError`` unless every tensor is symmetric, SPD and within the clamps."""
        T = self.tensors
        scale = np.abs(T).max(axis=(1, 2))
        if np.any(np.abs(T - np.swapaxes(T, 1, 2)).max(axis=(1, 2)) > 1e-12 * scale):
            raise ValueError("metric tensor not symmetric")
        lam = self.eigenvalues()
        if np.any(lam[:, 0] <= 0):
            raise ValueError("metric tensor not positive definite")
        if self.h_max is not None and np.any(lam[:, 0] < (1 - rtol) / self.h_max ** 2):
            raise ValueError("eigenvalue below 1/h_max^2")
        if self.h_min is not None and np.any(lam[:, -1] > (1 + rtol) / self.h_min ** 2):
            raise ValueError("eigenvalue above 1/h_min^2")
        if self.ratio_max is not None and np.any(lam[:, -1] > (1 + rtol) * self.ratio_max ** 2 * lam[:, 0]):
            raise ValueError("anisotropy ratio above ratio_max")
        return True


@dataclass
class EdgeErrorData:
    """Intermediate quantities of :func:`target_metric`.

    Attributes
    ----------
    edges : (E, 2) node pairs, ``edge_errors`` and ``n_created`` align with it
    edge_errors : e_ij
    n_created : n_ij = sqrt(e_ij / e), edges created along each edge
    n_per_node : n^i(1)
    error_level : e, the balanced error
    budget : N
    raw_metric : M~ before regularisation
    degenerate_error_field : True when every e_ij vanished (linear field)
    """

    edges: np.ndarray
    edge_errors: np.ndarray
    n_created: np.ndarray
    n_per_node: np.ndarray
    error_level: float
    budget: float
    raw_metric: np.ndarray
    degenerate_error_field: bool = False
    extra: dict = field(default_factory=dict)

    def predicted_nodes(self):
        d = self.raw_metric.shape[1]
        return self.error_level ** (-d / 2.0) * self.n_per_node.sum()


def _edge_vectors(mesh):
    e = mesh.edges
    return e, mesh.nodes[e[:, 1]] - mesh.nodes[e[:, 0]]


def _scatter_both(n, edges, values):
    """Sum per-edge ``values`` onto both endpoints."""
    out = np.zeros((n,) + values.shape[1:])
    np.add.at(out, edges[:, 0], values)
    np.add.at(out, edges[:, 1], values)
    return out


def _safe_inverse(A, what="star"):
    """Invert a batch of symmetric PSD matrices, regularising near-singular ones."""
    d = A.shape[1]
    tr = np.einsum("nii->n", A)
    lam = np.linalg.eigvalsh(A)
    weak = lam[:, 0] <= STAR_REG * tr
    if np.any(weak):
        A = A.copy()
        A[weak] += (STAR_REG * tr[weak])[:, None, None] * np.eye(d)
        lam_w = np.linalg.eigvalsh(A[weak])
        if np.any(lam_w[:, 0] <= 0):
            bad = int(np.flatnonzero(weak)[np.argmin(lam_w[:, 0])])
            raise MeshError(f"degenerate {what} matrix at node {bad}")
    return np.linalg.inv(A), weak


def star_tensors(mesh: SimplicialMesh):
    """``sum_j X_ij X_ij^T`` for every node."""
    edges, X = _edge_vectors(mesh)
    return _scatter_both(mesh.n_nodes, edges, np.einsum("ei,ej->eij", X, X))


def recover_gradient(mesh: SimplicialMesh, field):
    """Per-node recovered gradient ``G_i`` (exact for affine fields)."""
    U = mesh.fields[field] if isinstance(field, str) else np.asarray(field, dtype=np.float64)
    if U.shape != (mesh.n_nodes,):
        raise ValueError(f"field must have {mesh.n_nodes} values")
    edges, X = _edge_vectors(mesh)
    dU = U[edges[:, 1]] - U[edges[:, 0]]
    # (U_j - U_i) X_ij is the same seen from either endpoint
    rhs = _scatter_both(mesh.n_nodes, edges, dU[:, None] * X)
    inv, _ = _safe_inverse(star_tensors(mesh))
    return np.einsum("nij,nj->ni", inv, rhs)


def edge_errors(mesh: SimplicialMesh, gradients):
    """``e_ij = |(G_j - G_i) . X_ij|`` aligned with ``mesh.edges``."""
    edges, X = _edge_vectors(mesh)
    dG = gradients[edges[:, 1]] - gradients[edges[:, 0]]
    return np.abs(np.einsum("ei,ei->e", dG, X))


def unit_metric(mesh: SimplicialMesh) -> MetricField:
    """Unit mesh metric ``M_i``: every star has unit statistical edge length."""
    inv, _ = _safe_inverse(star_tensors(mesh))
    scale = mesh.star_sizes() / mesh.dim
    return MetricField(scale[:, None, None] * inv)


def metric_edge_lengths(mesh: SimplicialMesh, tensors, edges=None):
    """Mean of the two endpoint metric lengths of every edge."""
    edges = mesh.edges if edges is None else edges
    X = mesh.nodes[edges[:, 1]] - mesh.nodes[edges[:, 0]]
    li = np.sqrt(np.einsum("ei,eij,ej->e", X, tensors[edges[:, 0]], X))
    lj = np.sqrt(np.einsum("ei,eij,ej->e", X, tensors[edges[:, 1]], X))
    return 0.5 * (li + lj)


def nodes_per_node(mesh: SimplicialMesh, errors):
    """``n^i(1) = det((sum x^ x^T)^-1 (sum sqrt(e_ij) x^ x^T))`` with unit edge directions x^."""
    edges, X = _edge_vectors(mesh)
    u = X / np.linalg.norm(X, axis=1, keepdims=True)
    uu = np.einsum("ei,ej->eij", u, u)
    A = _scatter_both(mesh.n_nodes, edges, uu)
    B = _scatter_both(mesh.n_nodes, edges, np.sqrt(errors)[:, None, None] * uu)
    inv, _ = _safe_inverse(A, "normalised star")
    n1 = np.linalg.det(inv @ B)
    return np.maximum(n1, 0.0)


def default_bounds(mesh: SimplicialMesh, h0=None):
    lo, hi = mesh.domain if mesh.domain is not None else (mesh.nodes.min(0), mesh.nodes.max(0))
    diag = float(np.linalg.norm(hi - lo))
    h_min = h0 / 4.0 if h0 is not None else diag * 1e-4
    return h_min, diag / 4.0, 100.0


def target_metric(mesh: SimplicialMesh, field, budget, h_min=None, h_max=None, ratio_max=None,
                  errors=None, regularized=True):
    """Node-budgeted target metric ``M~`` and the error data behind it.

    ``errors`` overrides the computed edge errors (aligned with ``mesh.edges``).

    Returns
    -------
    metric : MetricField (regularised unless ``regularized=False``)
    data : EdgeErrorData
    """
    d = mesh.dim
    if budget < d + 1:
        raise ValueError(f"node budget must be >= {d + 1}, got {budget}")
    dh_min, dh_max, dratio = default_bounds(mesh)
    h_min = dh_min if h_min is None else h_min
    h_max = dh_max if h_max is None else h_max
    ratio_max = dratio if ratio_max is None else ratio_max

    if errors is None:
        errors = edge_errors(mesh, recover_gradient(mesh, field))
    else:
        errors = np.asarray(errors, dtype=np.float64)
        if errors.shape != (mesh.edges.shape[0],):
            raise ValueError("edge error override must align with mesh.edges")
    edges, X = _edge_vectors(mesh)
    sizes = mesh.star_sizes()

    if errors.max(initial=0.0) < LINEAR_FIELD_TOL:
        logger.info("all edge errors vanish: falling back to the scaled unit metric")
        raw = unit_metric(mesh).tensors * (budget / mesh.n_nodes) ** (2.0 / d)
        data = EdgeErrorData(edges, errors, np.ones_like(errors), np.ones(mesh.n_nodes),
                             1.0, float(budget), raw, degenerate_error_field=True)
    else:
        n1 = nodes_per_node(mesh, errors)
        e = (n1.sum() / budget) ** (2.0 / d)
        floored = np.maximum(errors, EDGE_ERROR_FLOOR * errors.max())
        S = _scatter_both(mesh.n_nodes, edges, np.einsum("ei,ej->eij", X, X) / floored[:, None, None])
        inv, _ = _safe_inverse(S, "error-weighted star")
        raw = (sizes / d / e)[:, None, None] * inv
        data = EdgeErrorData(edges, errors, np.sqrt(errors / e), n1, float(e), float(budget), raw)

    raw = 0.5 * (raw + np.swapaxes(raw, 1, 2))
    if not regularized:
        return MetricField(raw.copy()), data
    return regularize(MetricField(raw), h_min, h_max, ratio_max), data


def regularize(metric, h_min, h_max, ratio_max=100.0) -> MetricField:
    """Clamp eigenvalues to ``[1/h_max^2, 1/h_min^2]`` then cap the anisotropy.

    The anisotropy cap raises the smallest eigenvalue until
    ``lambda_max / lambda_min <= ratio_max**2``.
    """
    T = metric.tensors if isinstance(metric, MetricField) else np.asarray(metric, dtype=np.float64)
    if not (0 < h_min <= h_max):
        raise ValueError("need 0 < h_min <= h_max")
    if ratio_max < 1:
        raise ValueError("ratio_max must be >= 1")
    scale = np.abs(T).max(axis=(-2, -1))
    asym = np.abs(T - np.swapaxes(T, -1, -2)).max(axis=(-2, -1))
    if np.any(asym > 1e-10 * np.maximum(scale, 1e-300)):
        raise ValueError("metric tensor is not symmetric")
    lam, V = np.linalg.eigh(0.5 * (T + np.swapaxes(T, -1, -2)))
    lam = np.clip(lam, 1.0 / h_max ** 2, 1.0 / h_min ** 2)
    lam = np.maximum(lam, lam[..., -1:] / ratio_max ** 2)
    out = np.einsum("...ik,...k,...jk->...ij", V, lam, V)
    out = 0.5 * (out + np.swapaxes(out, -1, -2))
    return MetricField(out, h_min, h_max, ratio_max)


def intersect_metrics(a, b) -> MetricField:
    """Metric whose unit ball is the largest ellipsoid inside both input balls.

    Simultaneous reduction: with ``A = L L^T``, diagonalise ``L^-1 B L^-T`` and
    keep the larger of the two eigenvalues along each common direction.
    """
    A = a.tensors if isinstance(a, MetricField) else np.asarray(a, dtype=np.float64)
    B = b.tensors if isinstance(b, MetricField) else np.asarray(b, dtype=np.float64)
    if A.shape != B.shape:
        raise ValueError(f"metric fields differ in shape: {A.shape} vs {B.shape}")
    L = np.linalg.cholesky(A)
    Linv = np.linalg.inv(L)
    C = Linv @ B @ np.swapaxes(Linv, -1, -2)
    C = 0.5 * (C + np.swapaxes(C, -1, -2))
    c, Q = np.linalg.eigh(C)
    LQ = L @ Q
    out = np.einsum("...ik,...k,...jk->...ij", LQ, np.maximum(c, 1.0), LQ)
    out = 0.5 * (out + np.swapaxes(out, -1, -2))
    return MetricField(out)
