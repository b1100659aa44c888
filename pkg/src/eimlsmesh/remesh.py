"""Metric-driven remeshing by local operations on an existing simplicial mesh.

One sweep runs, in order: edge splits (longest first), edge collapses
(shortest first), edge flips (2D only unless ``flips_3d``), and a smoothing
pass. Edge lengths are measured in the node metric; the aim is to bring
every edge close to unit length. Nodal fields and the metric itself are
carried along: linear interpolation at created nodes, restriction at
removed nodes, barycentric re-interpolation at moved nodes.

Box-domain boundary nodes stay on the faces they lie on, and box corners
are never touched.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .mesh import MeshError, SimplicialMesh
from .metric import MetricField, regularize

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
# lengths this close to a threshold (relative) count as in range: lattice meshes
# put many edges exactly on sqrt(2) and rounding must not decide their fate
TIE_TOL = 1e-9
_VIRTUAL = -1  # cone apex closing the boundary in link checks


@dataclass
class AdaptOptions:
    split_threshold: float = SQRT2
    collapse_threshold: float = 1.0 / SQRT2
    max_sweeps: int = 10
    smoothing_passes: int = 1
    flip_quality_floor: float = 1e-3
    quality_floor: float = 0.05
    target_fraction: float = 0.9
    relaxation: float = 0.5
    flips_3d: bool = False

    def __post_init__(self):
        if not (0 < self.collapse_threshold < 1 < self.split_threshold):
            raise ValueError("need 0 < collapse_threshold < 1 < split_threshold")
        if self.max_sweeps < 0 or self.smoothing_passes < 0:
            raise ValueError("sweep and pass counts must be non-negative")


@dataclass
class AdaptStats:
    sweeps: int = 0
    splits: int = 0
    collapses: int = 0
    flips: int = 0
    moves: int = 0
    fraction_in_range: float = 0.0
    converged: bool = False
    n_nodes: int = 0
    n_elements: int = 0
    history: list = field(default_factory=list)


def metric_edge_length(mesh: SimplicialMesh, metric, edge):
    """Mean of ``sqrt(X^T M_i X)`` and ``sqrt(X^T M_j X)`` for edge ``(i, j)``."""
    T = metric.tensors if isinstance(metric, MetricField) else np.asarray(metric)
    i, j = edge
    X = mesh.nodes[j] - mesh.nodes[i]
    return 0.5 * (math.sqrt(X @ T[i] @ X) + math.sqrt(X @ T[j] @ X))


def _vol2(a, b, c):
    return 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


def _vol3(a, b, c, d):
    ax, ay, az = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    bx, by, bz = c[0] - a[0], c[1] - a[1], c[2] - a[2]
    cx, cy, cz = d[0] - a[0], d[1] - a[1], d[2] - a[2]
    return (ax * (by * cz - bz * cy) - ay * (bx * cz - bz * cx) + az * (bx * cy - by * cx)) / 6.0


# Metrics are stored per node as the upper triangle, row by row:
# (m00, m01, m11) in 2D, (m00, m01, m02, m11, m12, m22) in 3D.
_UPPER = {2: ([0, 0, 1], [0, 1, 1]), 3: ([0, 0, 0, 1, 1, 2], [0, 1, 2, 1, 2, 2])}
_Q2 = 4.0 * math.sqrt(3.0)


def _pack(T):
    d = T.shape[-1]
    r, c = _UPPER[d]
    return T[:, r, c]


def _unpack(P, d):
    r, c = _UPPER[d]
    T = np.empty((P.shape[0], d, d))
    T[:, r, c] = P
    T[:, c, r] = P
    return T


def _mlen2(x, M):
    # squared metric length of vector x
    if len(x) == 2:
        return M[0] * x[0] * x[0] + 2.0 * M[1] * x[0] * x[1] + M[2] * x[1] * x[1]
    return (M[0] * x[0] * x[0] + M[3] * x[1] * x[1] + M[5] * x[2] * x[2]
            + 2.0 * (M[1] * x[0] * x[1] + M[2] * x[0] * x[2] + M[4] * x[1] * x[2]))


def _quality2(p0, p1, p2, M0, M1, M2):
    """Mean-ratio quality of a triangle in the vertex-averaged metric (1 = equilateral)."""
    ax, ay = p1[0] - p0[0], p1[1] - p0[1]
    bx, by = p2[0] - p0[0], p2[1] - p0[1]
    vol = 0.5 * (ax * by - ay * bx)
    if vol <= 0:
        return -1.0
    cx, cy = bx - ax, by - ay
    sxx = ax * ax + bx * bx + cx * cx
    sxy = ax * ay + bx * by + cx * cy
    syy = ay * ay + by * by + cy * cy
    m0 = (M0[0] + M1[0] + M2[0]) / 3.0
    m1 = (M0[1] + M1[1] + M2[1]) / 3.0
    m2 = (M0[2] + M1[2] + M2[2]) / 3.0
    s = m0 * sxx + 2.0 * m1 * sxy + m2 * syy
    det = m0 * m2 - m1 * m1
    if det <= 0 or s <= 0:
        return 0.0
    return _Q2 * vol * math.sqrt(det) / s


def _quality3(p0, p1, p2, p3, M0, M1, M2, M3):
    """Mean-ratio quality of a tetrahedron in the vertex-averaged metric (1 = regular)."""
    ax, ay, az = p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]
    bx, by, bz = p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]
    cx, cy, cz = p3[0] - p0[0], p3[1] - p0[1], p3[2] - p0[2]
    vol = (ax * (by * cz - bz * cy) - ay * (bx * cz - bz * cx) + az * (bx * cy - by * cx)) / 6.0
    if vol <= 0:
        return -1.0
    dx, dy, dz = bx - ax, by - ay, bz - az
    ex, ey, ez = cx - ax, cy - ay, cz - az
    fx, fy, fz = cx - bx, cy - by, cz - bz
    sxx = ax * ax + bx * bx + cx * cx + dx * dx + ex * ex + fx * fx
    syy = ay * ay + by * by + cy * cy + dy * dy + ey * ey + fy * fy
    szz = az * az + bz * bz + cz * cz + dz * dz + ez * ez + fz * fz
    sxy = ax * ay + bx * by + cx * cy + dx * dy + ex * ey + fx * fy
    sxz = ax * az + bx * bz + cx * cz + dx * dz + ex * ez + fx * fz
    syz = ay * az + by * bz + cy * cz + dy * dz + ey * ez + fy * fz
    m00 = 0.25 * (M0[0] + M1[0] + M2[0] + M3[0])
    m01 = 0.25 * (M0[1] + M1[1] + M2[1] + M3[1])
    m02 = 0.25 * (M0[2] + M1[2] + M2[2] + M3[2])
    m11 = 0.25 * (M0[3] + M1[3] + M2[3] + M3[3])
    m12 = 0.25 * (M0[4] + M1[4] + M2[4] + M3[4])
    m22 = 0.25 * (M0[5] + M1[5] + M2[5] + M3[5])
    s = m00 * sxx + m11 * syy + m22 * szz + 2.0 * (m01 * sxy + m02 * sxz + m12 * syz)
    det = (m00 * (m11 * m22 - m12 * m12) - m01 * (m01 * m22 - m12 * m02)
           + m02 * (m01 * m12 - m11 * m02))
    if det <= 0 or s <= 0:
        return 0.0
    return 12.0 * (3.0 * vol * math.sqrt(det)) ** (2.0 / 3.0) / s


class _Workspace:
    """Mutable mesh in plain Python lists, tuned for many small local edits."""

    def __init__(self, mesh: SimplicialMesh, tensors, field_names, bounds):
        d = mesh.dim
        self.d = d
        n = mesh.n_nodes
        self.X = mesh.nodes.tolist()
        self.M = [tuple(t) for t in _pack(np.asarray(tensors, dtype=np.float64)).tolist()]
        self.field_names = list(field_names)
        if self.field_names:
            self.F = np.column_stack([mesh.fields[f] for f in self.field_names]).tolist()
        else:
            self.F = [[] for _ in range(n)]
        self.cons = mesh.box_constraints().tolist()
        self.full = (1 << (2 * d)) - 1
        self.alive = [True] * n
        self.elems = [tuple(e) for e in mesh.elements.tolist()]
        self.n2e = [set() for _ in range(n)]
        for k, e in enumerate(self.elems):
            for v in e:
                self.n2e[v].add(k)
        self.vol = _vol2 if d == 2 else _vol3
        self.quality = _quality2 if d == 2 else _quality3
        self.bounds = bounds
        self.domain = mesh.domain
        self.pairs = list(itertools.combinations(range(d + 1), 2))
        self.touched = set()

    # --- bookkeeping --------------------------------------------------------
    def add_node(self, x, M, F, cons):
        self.X.append(x)
        self.M.append(M)
        self.F.append(F)
        self.cons.append(cons)
        self.alive.append(True)
        self.n2e.append(set())
        return len(self.X) - 1

    def add_elem(self, e):
        k = len(self.elems)
        self.elems.append(e)
        for v in e:
            self.n2e[v].add(k)
        return k

    def kill_elem(self, k):
        for v in self.elems[k]:
            self.n2e[v].discard(k)
        self.elems[k] = None

    def neighbors(self, i):
        out = set()
        for k in self.n2e[i]:
            out.update(self.elems[k])
        out.discard(i)
        return out

    def elem_volume(self, e, X=None):
        X = self.X if X is None else X
        return self.vol(*[X[v] for v in e])

    def elem_quality(self, e, moved=-2, at=None):
        """Metric quality of element ``e``, optionally with node ``moved`` placed at ``at``."""
        X, M = self.X, self.M
        if moved in e:
            pts = [at if v == moved else X[v] for v in e]
        else:
            pts = [X[v] for v in e]
        return self.quality(*pts, *[M[v] for v in e])

    def edge_len(self, i, j):
        xi, xj = self.X[i], self.X[j]
        x = [xj[c] - xi[c] for c in range(self.d)]
        return 0.5 * (math.sqrt(max(_mlen2(x, self.M[i]), 0.0)) + math.sqrt(max(_mlen2(x, self.M[j]), 0.0)))

    # --- numpy views ----------------------------------------------------------
    def alive_elems(self):
        return np.array([e for e in self.elems if e is not None], dtype=np.int64).reshape(-1, self.d + 1)

    def edges_and_lengths(self):
        from .mesh import unique_edges

        edges = unique_edges(self.alive_elems(), self.d)
        X = np.asarray(self.X)
        T = _unpack(np.asarray(self.M), self.d)
        v = X[edges[:, 1]] - X[edges[:, 0]]
        li = np.sqrt(np.einsum("ei,eij,ej->e", v, T[edges[:, 0]], v))
        lj = np.sqrt(np.einsum("ei,eij,ej->e", v, T[edges[:, 1]], v))
        return edges, 0.5 * (li + lj)

    # --- boundary helpers ---------------------------------------------------------
    def on_boundary_facet(self, nodes):
        c = self.full
        for v in nodes:
            c &= self.cons[v]
            if not c:
                return False
        return True

    def _link(self, simplices, removed):
        """Link simplices of the star made of ``simplices`` around vertex set ``removed``."""
        out = set()
        d = self.d
        for e in simplices:
            opp = tuple(sorted(v for v in e if v not in removed))
            for r in range(1, len(opp) + 1):
                out.update(itertools.combinations(opp, r))
            # boundary facets of e containing all removed vertices get coned to the virtual apex
            for skip in opp:
                facet = [v for v in e if v != skip]
                if removed.issubset(facet) and self.on_boundary_facet(facet):
                    rest = tuple(sorted(v for v in facet if v not in removed))
                    out.add((_VIRTUAL,))
                    for r in range(1, len(rest) + 1):
                        for s in itertools.combinations(rest, r):
                            out.add((_VIRTUAL,) + s)
        return out

    def link_condition(self, i, j, shell):
        li = self._link([self.elems[k] for k in self.n2e[i]], {i})
        lj = self._link([self.elems[k] for k in self.n2e[j]], {j})
        lij = self._link([self.elems[k] for k in shell], {i, j})
        return (li & lj) == lij

    # --- operations -----------------------------------------------------------
    def split(self, i, j):
        shell = sorted(self.n2e[i] & self.n2e[j])
        if not shell:
            return False
        xi, xj = self.X[i], self.X[j]
        x = [0.5 * (xi[c] + xj[c]) for c in range(self.d)]
        M = tuple(0.5 * (a + b) for a, b in zip(self.M[i], self.M[j]))
        F = [0.5 * (a + b) for a, b in zip(self.F[i], self.F[j])]
        m = self.add_node(x, M, F, self.cons[i] & self.cons[j])
        for k in shell:
            e = self.elems[k]
            self.kill_elem(k)
            self.add_elem(tuple(m if v == j else v for v in e))
            self.add_elem(tuple(m if v == i else v for v in e))
        self.touched.add(m)
        return True

    def collapse(self, i, j, max_len):
        """Merge node ``i`` into node ``j`` if the result is valid."""
        if self.cons[i] & ~self.cons[j]:
            return False
        shell = self.n2e[i] & self.n2e[j]
        if not shell:
            return False
        ball = [k for k in self.n2e[i] if k not in shell]
        X, xj = self.X, self.X[j]
        # cheap checks first: orientation, then the length of the new edges
        for k in ball:
            if self.vol(*[xj if v == i else X[v] for v in self.elems[k]]) <= 0:
                return False
        nbr_j = self.neighbors(j)
        for v in self.neighbors(i):
            if v != j and v not in nbr_j and self.edge_len(j, v) > max_len:
                return False
        for k in ball:
            e = self.elems[k]
            new_q = self.elem_quality(e, i, xj)
            if new_q < self.quality_floor and new_q < self.elem_quality(e):
                return False
        if not self.link_condition(i, j, shell):
            return False
        for k in sorted(shell):
            self.kill_elem(k)
        for k in sorted(ball):
            e = self.elems[k]
            self.kill_elem(k)
            self.add_elem(tuple(j if v == i else v for v in e))
        self.alive[i] = False
        self.touched.add(j)
        return True

    def flip2d(self, i, j, floor):
        shell = sorted(self.n2e[i] & self.n2e[j])
        if len(shell) != 2:
            return False
        e1, e2 = self.elems[shell[0]], self.elems[shell[1]]
        k = next(v for v in e1 if v != i and v != j)
        l = next(v for v in e2 if v != i and v != j)
        if self.n2e[k] & self.n2e[l]:
            return False
        X = self.X
        # Delaunay test in the averaged metric of the four nodes
        Mi, Mj, Mk, Ml = self.M[i], self.M[j], self.M[k], self.M[l]
        M = [(Mi[c] + Mj[c] + Mk[c] + Ml[c]) * 0.25 for c in range(3)]
        if M[0] <= 0:
            return False
        L11 = math.sqrt(M[0])
        L21 = M[1] / L11
        t = M[2] - L21 * L21
        if t <= 0:
            return False
        L22 = math.sqrt(t)

        def tr(p):
            return (L11 * p[0] + L21 * p[1], L22 * p[1])

        a, b, c, dd = tr(X[i]), tr(X[j]), tr(X[k]), tr(X[l])
        if _vol2(a, b, c) < 0:
            a, b = b, a
        # incircle of (a, b, c) for point dd
        adx, ady = a[0] - dd[0], a[1] - dd[1]
        bdx, bdy = b[0] - dd[0], b[1] - dd[1]
        cdx, cdy = c[0] - dd[0], c[1] - dd[1]
        det = ((adx * adx + ady * ady) * (bdx * cdy - cdx * bdy)
               - (bdx * bdx + bdy * bdy) * (adx * cdy - cdx * ady)
               + (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady))
        scale = (adx * adx + ady * ady + bdx * bdx + bdy * bdy + cdx * cdx + cdy * cdy) ** 2
        if det <= 1e-12 * scale:
            return False
        # the quad must be convex: i and j strictly on both sides of k-l
        oi = _vol2(X[k], X[l], X[i])
        oj = _vol2(X[k], X[l], X[j])
        if oi * oj >= 0:
            return False
        t1 = (k, l, i) if oi > 0 else (l, k, i)
        t2 = (k, l, j) if oj > 0 else (l, k, j)
        old_q = min(self.elem_quality(e1), self.elem_quality(e2))
        new_q = min(self.elem_quality(t1), self.elem_quality(t2))
        if new_q < floor or new_q <= old_q:
            return False
        self.kill_elem(shell[0])
        self.kill_elem(shell[1])
        self.add_elem(t1)
        self.add_elem(t2)
        self.touched.update((i, j, k, l))
        return True

    def flip_edge_3d(self, i, j):
        """3-2 swap: remove edge (i, j) surrounded by exactly three tetrahedra."""
        shell = sorted(self.n2e[i] & self.n2e[j])
        if len(shell) != 3:
            return False
        ring = sorted({v for k in shell for v in self.elems[k]} - {i, j})
        if len(ring) != 3 or self.on_boundary_facet([i, j]):
            return False
        a, b, c = ring
        if self.n2e[a] & self.n2e[b] & self.n2e[c]:
            return False  # face (a, b, c) already exists
        X = self.X
        t1 = (a, b, c, i) if self.vol(X[a], X[b], X[c], X[i]) > 0 else (b, a, c, i)
        t2 = (a, b, c, j) if self.vol(X[a], X[b], X[c], X[j]) > 0 else (b, a, c, j)
        if self.elem_volume(t1) <= 0 or self.elem_volume(t2) <= 0:
            return False
        old_q = min(self.elem_quality(self.elems[k]) for k in shell)
        new_q = min(self.elem_quality(t1), self.elem_quality(t2))
        if new_q <= old_q:
            return False
        # volumes must match, otherwise the new pair does not tile the shell
        vold = sum(self.elem_volume(self.elems[k]) for k in shell)
        if abs(self.elem_volume(t1) + self.elem_volume(t2) - vold) > 1e-9 * vold:
            return False
        for k in shell:
            self.kill_elem(k)
        self.add_elem(t1)
        self.add_elem(t2)
        self.touched.update((i, j, a, b, c))
        return True

    def smooth_node(self, i, relaxation):
        cons = self.cons[i]
        d = self.d
        free = [c for c in range(d) if not (cons >> (2 * c)) & 3]
        if not free:
            return False
        nbrs = sorted(self.neighbors(i))
        if not nbrs:
            return False
        xi = self.X[i]
        target = [0.0] * d
        for v in nbrs:
            xv = self.X[v]
            ell = self.edge_len(i, v)
            if ell <= 0:
                return False
            for c in range(d):
                target[c] += xv[c] - (xv[c] - xi[c]) / ell
        target = [t / len(nbrs) for t in target]
        ball = sorted(self.n2e[i])
        old_elems = [self.elems[k] for k in ball]
        old_q = min(self.elem_quality(e) for e in old_elems)
        step = relaxation
        for _ in range(3):
            new = list(xi)
            for c in free:
                new[c] = xi[c] + step * (target[c] - xi[c])
            ok = True
            new_q = math.inf
            for e in old_elems:
                q = self.elem_quality(e, i, new)
                if q <= 0:
                    ok = False
                    break
                new_q = min(new_q, q)
            if ok and new_q >= old_q:
                break
            step *= 0.5
        else:
            return False
        # re-interpolate carried data at the new position from the old ball
        lam = None
        for e in old_elems:
            lam = self._barycentric(e, new)
            if min(lam) >= -1e-10:
                break
        else:
            return False
        nodes = old_elems[old_elems.index(e)]
        self.F[i] = [sum(lam[a] * self.F[v][f] for a, v in enumerate(nodes)) for f in range(len(self.F[i]))]
        self.M[i] = tuple(sum(lam[a] * self.M[v][c] for a, v in enumerate(nodes)) for c in range(len(self.M[i])))
        self.X[i] = new
        self.touched.add(i)
        return True

    def _barycentric(self, e, p):
        pts = [self.X[v] for v in e]
        total = self.vol(*pts)
        lam = []
        for a in range(len(e)):
            sub = list(pts)
            sub[a] = p
            lam.append(self.vol(*sub) / total)
        return lam

    # --- export -----------------------------------------------------------------
    def regularize_touched(self):
        if not self.touched or self.bounds is None:
            self.touched = set()
            return
        idx = sorted(self.touched)
        d = self.d
        T = _unpack(np.asarray([self.M[v] for v in idx]), d)
        h_min, h_max, ratio = self.bounds
        R = _pack(regularize(T, h_min, h_max, ratio).tensors).tolist()
        for v, t in zip(idx, R):
            self.M[v] = tuple(t)
        self.touched = set()

    def to_mesh(self):
        keep = [v for v in range(len(self.X)) if self.alive[v] and self.n2e[v]]
        remap = np.full(len(self.X), -1, dtype=np.intp)
        remap[keep] = np.arange(len(keep))
        elems = remap[self.alive_elems()]
        if np.any(elems < 0):
            raise MeshError("element references a removed node")
        nodes = np.asarray(self.X)[keep]
        fields = {}
        if self.field_names:
            F = np.asarray(self.F)[keep]
            fields = {name: F[:, c] for c, name in enumerate(self.field_names)}
        metric = _unpack(np.asarray(self.M)[keep], self.d)
        return SimplicialMesh(nodes, elems, domain=self.domain, fields=fields, metric=metric)


def adapt(mesh: SimplicialMesh, metric, fields=None, options=None, bounds=None):
    """Remesh ``mesh`` towards unit edge length in ``metric``.

    Parameters
    ----------
    mesh : SimplicialMesh
    metric : MetricField or array (n, d, d)
    fields : list of field names to carry (default: all fields on the mesh)
    options : AdaptOptions
    bounds : (h_min, h_max, ratio_max) used to re-regularise interpolated
        tensors; taken from ``metric`` when it is a regularised MetricField.

    Returns
    -------
    new_mesh : SimplicialMesh
        Carries the requested fields and the interpolated metric (``.metric``).
    stats : AdaptStats
    """
    options = options or AdaptOptions()
    if isinstance(metric, MetricField):
        if bounds is None and metric.h_min is not None:
            bounds = (metric.h_min, metric.h_max, metric.ratio_max)
        tensors = metric.tensors
    else:
        tensors = np.asarray(metric, dtype=np.float64)
    if tensors.shape != (mesh.n_nodes, mesh.dim, mesh.dim):
        raise ValueError("metric does not match the mesh")
    field_names = sorted(mesh.fields) if fields is None else list(fields)
    ws = _Workspace(mesh, tensors, field_names, bounds)
    ws.quality_floor = options.quality_floor
    stats = AdaptStats()
    lo_t, hi_t = options.collapse_threshold, options.split_threshold

    for sweep in range(options.max_sweeps):
        counts = {"splits": 0, "collapses": 0, "flips": 0, "moves": 0}

        edges, lengths = ws.edges_and_lengths()
        cand = np.flatnonzero(lengths > hi_t * (1.0 + TIE_TOL))
        order = cand[np.lexsort((edges[cand, 1], edges[cand, 0], -lengths[cand]))]
        for i, j in edges[order].tolist():
            counts["splits"] += ws.split(i, j)
        ws.regularize_touched()

        edges, lengths = ws.edges_and_lengths()
        cand = np.flatnonzero(lengths < lo_t * (1.0 - TIE_TOL))
        order = cand[np.lexsort((edges[cand, 1], edges[cand, 0], lengths[cand]))]
        for i, j in edges[order].tolist():
            if not (ws.alive[i] and ws.alive[j]):
                continue
            if ws.collapse(i, j, hi_t) or ws.collapse(j, i, hi_t):
                counts["collapses"] += 1

        if ws.d == 2 or options.flips_3d:
            for _ in range(2):
                edges, _ = ws.edges_and_lengths()
                n_flip = 0
                for i, j in edges.tolist():
                    if ws.d == 2:
                        n_flip += ws.flip2d(i, j, options.flip_quality_floor)
                    else:
                        n_flip += ws.flip_edge_3d(i, j)
                counts["flips"] += n_flip
                if n_flip == 0:
                    break

        for _ in range(options.smoothing_passes):
            for v in range(len(ws.X)):
                if ws.alive[v] and ws.n2e[v]:
                    counts["moves"] += ws.smooth_node(v, options.relaxation)
        ws.regularize_touched()

        _, lengths = ws.edges_and_lengths()
        frac = float(np.mean((lengths >= lo_t * (1.0 - TIE_TOL))
                             & (lengths <= hi_t * (1.0 + TIE_TOL)))) if lengths.size else 1.0
        for key, val in counts.items():
            setattr(stats, key, getattr(stats, key) + val)
        stats.sweeps = sweep + 1
        stats.fraction_in_range = frac
        stats.history.append(dict(counts, fraction_in_range=frac))
        logger.debug("sweep %d: %s in-range %.3f", sweep, counts, frac)
        topo_changes = counts["splits"] + counts["collapses"] + counts["flips"]
        if frac >= options.target_fraction or topo_changes == 0:
            stats.converged = frac >= options.target_fraction
            break

    out = ws.to_mesh()
    stats.n_nodes = out.n_nodes
    stats.n_elements = out.n_elements
    return out, stats
