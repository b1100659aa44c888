"""Extended implicit moving least squares (EIMLS) signed field.

The field at ``x`` is the weighted mean of the signed distances from ``x`` to
the tangent planes of its ``k`` nearest oriented points::

    alpha(x) = sum_i w_i(x) (x - p_i).n_i / sum_i w_i(x)
    w_i(x)   = phi(|p_i - x| / h(x))
    h(x)     = max(|p_nn(x) - x| / l_gamma, h0)

Plain IMLS uses a constant ``h`` and is undefined where every weight falls
below ``10**-gamma``; inflating ``h`` with the distance to the cloud keeps the
nearest weight above that floor, so the extended field is defined everywhere.
``alpha_eps = eps * tanh(alpha / eps)`` is the truncated variant fed to the
mesh adaptation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_box, check_count, check_points, check_positive
from .pointcloud import OrientedPointCloud
from .spatial import NeighborIndex

KERNELS = ("gaussian", "compact", "interpolatory")


def l_gamma(gamma) -> float:
    """Radius beyond which the unit Gaussian weight drops below ``10**-gamma``."""
    gamma = check_positive(gamma, "gamma")
    return math.sqrt(2.0 * gamma * math.log(10.0))


def kernel_weight(kernel, x):
    """Generic weighting function ``phi`` evaluated at ``x >= 0``."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("kernel argument must be non-negative")
    if kernel == "gaussian":
        return np.exp(-0.5 * x * x)
    if kernel == "compact":
        return np.where(x < 1.0, (1.0 - x * x) ** 4, 0.0)
    if kernel == "interpolatory":
        if np.any(x == 0):
            raise ValueError("interpolatory kernel is singular at 0")
        return 1.0 / (x * x)
    raise ValueError(f"unknown kernel {kernel!r}; expected one of {KERNELS}")


def support_radius(kernel, gamma) -> float:
    """Radius where ``phi`` reaches the numeric floor ``10**-gamma``.

    For the Gaussian this is ``l_gamma``. The compact kernel hits the floor at
    ``sqrt(1 - 10**(-gamma/4))``; the interpolatory kernel never does.
    """
    if kernel == "gaussian":
        return l_gamma(gamma)
    if kernel == "compact":
        check_positive(gamma, "gamma")
        return math.sqrt(1.0 - 10.0 ** (-gamma / 4.0))
    if kernel == "interpolatory":
        return math.inf
    raise ValueError(f"unknown kernel {kernel!r}; expected one of {KERNELS}")


@dataclass(frozen=True)
class EimlsConfig:
    h0: float
    gamma: float = 7.0
    k: int = 80
    epsilon: float | None = None
    kernel: str = "gaussian"

    def __post_init__(self):
        check_positive(self.h0, "h0")
        check_positive(self.gamma, "gamma")
        check_count(self.k, "k")
        if self.epsilon is not None:
            check_positive(self.epsilon, "epsilon")
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}; expected one of {KERNELS}")


class EimlsField:
    """Immutable EIMLS field over an oriented cloud.

    All evaluation methods accept either one point of shape (d,) or a batch of
    shape (m, d) and return a scalar or an (m,) array accordingly.
    """

    def __init__(self, cloud: OrientedPointCloud, config: EimlsConfig, index=None,
                 chunk_size=20000, workers=1):
        if cloud.normals is None:
            raise ValueError("EIMLS needs a cloud with normals")
        if cloud.is_empty:
            raise ValueError("EIMLS needs a non-empty cloud")
        if config.k > cloud.n_points:
            config = EimlsConfig(config.h0, config.gamma, cloud.n_points, config.epsilon, config.kernel)
        self.cloud = cloud
        self.config = config
        self.index = index if index is not None else NeighborIndex(cloud.points)
        self.l_gamma = l_gamma(config.gamma)
        self.support = support_radius(config.kernel, config.gamma)
        self.chunk_size = chunk_size
        self.workers = workers

    @property
    def dim(self) -> int:
        return self.cloud.dim

    def _batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        X = check_points(x.reshape(1, -1) if single else x, dim=self.dim,
                         name="query points", allow_empty=True)
        return X, single

    def _chunks(self, X):
        for start in range(0, X.shape[0], self.chunk_size):
            yield start, X[start:start + self.chunk_size]

    def h_extended(self, x):
        """Query-dependent space parameter ``max(dist_to_cloud / support, h0)``."""
        X, single = self._batch(x)
        d0 = self.index.nearest_distance(X, workers=self.workers)
        h = np.maximum(d0 / self.support, self.config.h0)
        return float(h[0]) if single else h

    def _signed_and_dist(self, X):
        idx, d2 = self.index.query(X, self.config.k, workers=self.workers)
        diff = X[:, None, :] - self.cloud.points[idx]
        signed = np.einsum("mki,mki->mk", diff, self.cloud.normals[idx])
        return signed, np.sqrt(d2)

    def _weighted_mean(self, signed, r, h):
        kernel = self.config.kernel
        if kernel == "interpolatory":
            out = np.empty(signed.shape[0])
            hit = r[:, 0] == 0
            with np.errstate(divide="ignore"):
                w = (h[:, None] / r) ** 2
            out[~hit] = (w[~hit] * signed[~hit]).sum(1) / w[~hit].sum(1)
            # coincident points carry infinite weight: average their distances
            for row in np.flatnonzero(hit):
                on = r[row] == 0
                out[row] = signed[row, on].mean()
            return out
        w = kernel_weight(kernel, r / h[:, None])
        wsum = w.sum(axis=1)
        assert np.all(wsum > 0), "EIMLS weight sum vanished: nearest weight below the floor"
        return (w * signed).sum(axis=1) / wsum

    def eval(self, x):
        """Signed EIMLS value (untruncated)."""
        X, single = self._batch(x)
        out = np.empty(X.shape[0])
        for start, chunk in self._chunks(X):
            signed, r = self._signed_and_dist(chunk)
            h = np.maximum(r[:, 0] / self.support, self.config.h0)
            out[start:start + len(chunk)] = self._weighted_mean(signed, r, h)
        return float(out[0]) if single else out

    def eval_plain_imls(self, x, h_const):
        """IMLS with constant bandwidth; NaN where every weight is below ``10**-gamma``.

        Only the ``k`` nearest points are summed. Farther points weigh less
        than the nearest one, so the defined/undefined verdict is the same as
        for the sum over the whole cloud.
        """
        h_const = check_positive(h_const, "h_const")
        X, single = self._batch(x)
        floor = 10.0 ** (-self.config.gamma)
        out = np.empty(X.shape[0])
        for start, chunk in self._chunks(X):
            signed, r = self._signed_and_dist(chunk)
            if self.config.kernel == "interpolatory":
                h = np.full(len(chunk), h_const)
                out[start:start + len(chunk)] = self._weighted_mean(signed, r, h)
                continue
            w = kernel_weight(self.config.kernel, r / h_const)
            w[w < floor] = 0.0
            wsum = w.sum(axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                vals = (w * signed).sum(axis=1) / wsum
            vals[wsum == 0] = np.nan
            out[start:start + len(chunk)] = vals
        return float(out[0]) if single else out

    def eval_truncated(self, x):
        """``eps * tanh(alpha / eps)``: bounded by eps, slope 1 at the surface."""
        eps = self.config.epsilon
        if eps is None:
            raise ValueError("EimlsConfig.epsilon is not set")
        return truncate(self.eval(x), eps)

    def gradient(self, x, truncated=False, step=None):
        """Central finite-difference gradient with step ``h0 / 10``."""
        X, single = self._batch(x)
        step = self.config.h0 / 10.0 if step is None else step
        f = self.eval_truncated if truncated else self.eval
        grad = np.empty_like(X)
        for a in range(self.dim):
            e = np.zeros(self.dim)
            e[a] = step
            grad[:, a] = (f(X + e) - f(X - e)) / (2.0 * step)
        return grad[0] if single else grad


def truncate(values, epsilon):
    """``epsilon * tanh(values / epsilon)``, kept strictly inside ``(-epsilon, epsilon)``.

    tanh rounds to exactly 1.0 in double precision past about 19, so saturated
    values are pulled back to the largest double below ``epsilon``.
    """
    out = epsilon * np.tanh(np.asarray(values, dtype=np.float64) / epsilon)
    bound = np.nextafter(epsilon, 0.0)
    return np.clip(out, -bound, bound)


def grid_axes(lo, hi, resolution):
    lo, hi = check_box(lo, hi)
    res = np.broadcast_to(np.asarray(resolution, dtype=int), lo.shape)
    if np.any(res < 2):
        raise ValueError("resolution must be >= 2 along every axis")
    return [np.linspace(lo[a], hi[a], res[a]) for a in range(lo.shape[0])]


def sample_on_grid(field: EimlsField, lo, hi, resolution, truncated=True, plain_h=None):
    """Evaluate the field on a regular grid.

    Returns an array of shape ``resolution`` indexed ``[ix, iy(, iz)]``.
    With ``plain_h`` the plain IMLS baseline is sampled instead (NaN where
    undefined).
    """
    axes = grid_axes(lo, hi, resolution)
    if len(axes) != field.dim:
        raise ValueError(f"box dimension {len(axes)} does not match the field dimension {field.dim}")
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.stack([m.ravel() for m in mesh], axis=1)
    if plain_h is not None:
        vals = field.eval_plain_imls(X, plain_h)
        if truncated and field.config.epsilon is not None:
            vals = truncate(vals, field.config.epsilon)
    elif truncated and field.config.epsilon is not None:
        vals = field.eval_truncated(X)
    else:
        vals = field.eval(X)
    return vals.reshape(mesh[0].shape)


def write_vtk_structured_points(path, values, lo, hi, name="alpha"):
    """Write a grid from :func:`sample_on_grid` as legacy ASCII STRUCTURED_POINTS."""
    values = np.asarray(values, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    shape = values.shape
    dims = list(shape) + [1] * (3 - len(shape))
    spacing = [(hi[a] - lo[a]) / (shape[a] - 1) for a in range(len(shape))] + [1.0] * (3 - len(shape))
    origin = list(lo) + [0.0] * (3 - len(shape))
    # VTK wants x varying fastest
    flat = values.transpose(tuple(reversed(range(values.ndim)))).ravel()
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{name} sampled on a regular grid\nASCII\nDATASET STRUCTURED_POINTS\n")
        fh.write("DIMENSIONS {} {} {}\n".format(*dims))
        fh.write("ORIGIN {!r} {!r} {!r}\n".format(*map(float, origin)))
        fh.write("SPACING {!r} {!r} {!r}\n".format(*map(float, spacing)))
        fh.write(f"POINT_DATA {flat.size}\nSCALARS {name} double 1\nLOOKUP_TABLE default\n")
        for v in flat:
            fh.write(f"{v:.17g}\n")


def read_vtk_structured_points(path):
    """Read back a file written by :func:`write_vtk_structured_points`.

    Returns ``(values, origin, spacing)`` with values indexed ``[ix, iy(, iz)]``.
    """
    with open(path) as fh:
        lines = fh.read().split("\n")
    dims = origin = spacing = None
    start = None
    for i, line in enumerate(lines):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "DIMENSIONS":
            dims = [int(v) for v in parts[1:4]]
        elif parts[0] == "ORIGIN":
            origin = np.array([float(v) for v in parts[1:4]])
        elif parts[0] == "SPACING":
            spacing = np.array([float(v) for v in parts[1:4]])
        elif parts[0] == "LOOKUP_TABLE":
            start = i + 1
            break
    if dims is None or start is None:
        raise ValueError(f"{path}: not a STRUCTURED_POINTS file")
    n = int(np.prod(dims))
    flat = np.array([float(v) for v in " ".join(lines[start:]).split()[:n]])
    shape = [d for d in dims if d > 1] if dims[2] == 1 else dims
    values = flat.reshape(tuple(reversed(shape))).transpose()
    return values, origin, spacing


class EIMLS(BaseEstimator):
    """Scikit-learn style front end to :class:`EimlsField`.

    ``fit(points, normals)`` builds the kd-tree; ``decision_function`` returns
    the signed EIMLS value and ``predict`` its tanh truncation when
    ``epsilon`` is set.

    Examples
    --------
    >>> import numpy as np
    >>> est = EIMLS(h0=0.01, k=1).fit(np.array([[0.0, 0.0]]), np.array([[0.0, 1.0]]))
    >>> float(est.decision_function(np.array([[3.0, 0.25]]))[0])
    0.25
    """

    def __init__(self, h0=0.003, gamma=7.0, k=80, epsilon=None, kernel="gaussian"):
        self.h0 = h0
        self.gamma = gamma
        self.k = k
        self.epsilon = epsilon
        self.kernel = kernel

    def fit(self, X, normals=None):
        if isinstance(X, OrientedPointCloud):
            cloud = X
        else:
            if normals is None:
                raise ValueError("normals are required")
            X = check_points(X, name="points")
            cloud = OrientedPointCloud(X, normals=normals)
        config = EimlsConfig(self.h0, self.gamma, self.k, self.epsilon, self.kernel)
        self.field_ = EimlsField(cloud, config)
        self.n_features_in_ = cloud.dim
        return self

    def decision_function(self, X):
        check_is_fitted(self, "field_")
        return self.field_.eval(check_points(X, dim=self.n_features_in_, allow_empty=True))

    def predict(self, X):
        check_is_fitted(self, "field_")
        X = check_points(X, dim=self.n_features_in_, allow_empty=True)
        if self.epsilon is None:
            return self.field_.eval(X)
        return self.field_.eval_truncated(X)
