"""Simplicial meshes (triangles in 2D, tetrahedra in 3D) over a box domain."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ._validation import check_box, check_positive

VOLUME_TOL = 1e-14


class MeshError(ValueError):
    """Raised when a mesh violates its structural invariants."""


class PointLocationError(ValueError):
    """Raised when a query point lies outside every element."""


def signed_volumes(nodes, elements):
    """Signed measure of every simplex (area in 2D, volume in 3D)."""
    nodes = np.asarray(nodes, dtype=np.float64)
    elements = np.asarray(elements, dtype=np.intp)
    d = nodes.shape[1]
    if elements.shape[0] == 0:
        return np.zeros(0)
    base = nodes[elements[:, 0]]
    J = nodes[elements[:, 1:]] - base[:, None, :]
    if d == 2:
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        return det / 2.0
    det = (
        J[:, 0, 0] * (J[:, 1, 1] * J[:, 2, 2] - J[:, 1, 2] * J[:, 2, 1])
        - J[:, 0, 1] * (J[:, 1, 0] * J[:, 2, 2] - J[:, 1, 2] * J[:, 2, 0])
        + J[:, 0, 2] * (J[:, 1, 0] * J[:, 2, 1] - J[:, 1, 1] * J[:, 2, 0])
    )
    return det / 6.0


def unique_edges(elements, d):
    """Sorted unique node pairs ``(i < j)`` of a simplex list, lexicographic order."""
    pairs = np.array(list(itertools.combinations(range(d + 1), 2)))
    e = np.asarray(elements, dtype=np.int64)[:, pairs].reshape(-1, 2)
    if e.shape[0] == 0:
        return np.zeros((0, 2), dtype=np.intp)
    lo, hi = e.min(axis=1), e.max(axis=1)
    base = int(hi.max()) + 1
    keys = np.unique(lo * base + hi)
    return np.column_stack([keys // base, keys % base]).astype(np.intp)


def boundary_facets(elements, d):
    """Facets ((d)-node subsets) owned by exactly one element, sorted node order."""
    combos = np.array(list(itertools.combinations(range(d + 1), d)))
    f = np.asarray(elements, dtype=np.intp)[:, combos].reshape(-1, d)
    f.sort(axis=1)
    uniq, counts = np.unique(f, axis=0, return_counts=True)
    return uniq[counts == 1]


@dataclass
class NodalField:
    """One finite scalar per mesh node."""

    values: np.ndarray
    name: str = "u"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"field {self.name!r} contains non-finite values")

    def __len__(self):
        return self.values.shape[0]


class SimplicialMesh:
    """Nodes, positively oriented simplices and derived edge / star data.

    Parameters
    ----------
    nodes : array (n, d)
    elements : int array (m, d + 1)
    domain : (lo, hi) or None
        Axis-aligned box the mesh fills. Nodes lying on a box face are
        boundary nodes and remeshing keeps them on that face.
    fields : dict name -> (n,) array, optional
    metric : array (n, d, d), optional
    repair_orientation : bool
        Swap two indices of negatively oriented elements instead of raising.
    """

    def __init__(self, nodes, elements, domain=None, fields=None, metric=None,
                 repair_orientation=False):
        nodes = np.array(nodes, dtype=np.float64)
        if nodes.ndim != 2 or nodes.shape[1] not in (2, 3):
            raise MeshError(f"nodes must have shape (n, 2) or (n, 3), got {nodes.shape}")
        d = nodes.shape[1]
        elements = np.array(elements, dtype=np.intp).reshape(-1, d + 1)
        if elements.size and (elements.min() < 0 or elements.max() >= nodes.shape[0]):
            raise MeshError("element references a node index out of range")
        if not np.all(np.isfinite(nodes)):
            raise MeshError("nodes contain non-finite coordinates")
        if repair_orientation and elements.size:
            neg = signed_volumes(nodes, elements) < 0
            elements[neg, 0], elements[neg, 1] = elements[neg, 1].copy(), elements[neg, 0].copy()
        self.nodes = nodes
        self.elements = elements
        if domain is not None:
            lo, hi = check_box(*domain, dim=d)
            domain = (lo, hi)
        self.domain = domain
        self.fields = {}
        for name, values in (fields or {}).items():
            self.set_field(name, values)
        self.metric = None
        if metric is not None:
            self.set_metric(metric)
        self._cache = {}

    # --- basic properties -------------------------------------------------
    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def set_field(self, name, values):
        f = NodalField(values, name)
        if len(f) != self.n_nodes:
            raise MeshError(f"field {name!r} has {len(f)} values for {self.n_nodes} nodes")
        self.fields[name] = f.values

    def set_metric(self, metric):
        metric = np.asarray(metric, dtype=np.float64)
        if metric.shape != (self.n_nodes, self.dim, self.dim):
            raise MeshError(f"metric must have shape ({self.n_nodes}, {self.dim}, {self.dim})")
        self.metric = metric

    def copy(self):
        return SimplicialMesh(
            self.nodes.copy(), self.elements.copy(), domain=self.domain,
            fields={k: v.copy() for k, v in self.fields.items()},
            metric=None if self.metric is None else self.metric.copy(),
        )

    # --- derived data -----------------------------------------------------
    def volumes(self):
        if "volumes" not in self._cache:
            self._cache["volumes"] = signed_volumes(self.nodes, self.elements)
        return self._cache["volumes"]

    @property
    def edges(self):
        """Unique edges as an (E, 2) array with ``i < j``."""
        if "edges" not in self._cache:
            self._cache["edges"] = unique_edges(self.elements, self.dim)
        return self._cache["edges"]

    def _stars(self):
        if "stars" not in self._cache:
            e = self.edges
            both = np.concatenate([e, e[:, ::-1]])
            order = np.lexsort((both[:, 1], both[:, 0]))
            both = both[order]
            ptr = np.zeros(self.n_nodes + 1, dtype=np.intp)
            np.add.at(ptr, both[:, 0] + 1, 1)
            self._cache["stars"] = (np.cumsum(ptr), both[:, 1].copy(), both[:, 0].copy())
        return self._cache["stars"]

    def star(self, i):
        """Gamma(i): sorted indices of nodes sharing an edge with node ``i``."""
        ptr, nbr, _ = self._stars()
        return nbr[ptr[i]:ptr[i + 1]]

    def star_arrays(self):
        """CSR view of every star: ``(ptr, neighbours, owner)``."""
        return self._stars()

    def star_sizes(self):
        ptr, _, _ = self._stars()
        return np.diff(ptr)

    def boundary_nodes(self):
        """Boolean mask of nodes on the mesh boundary (on a boundary facet)."""
        if "bnd" not in self._cache:
            mask = np.zeros(self.n_nodes, dtype=bool)
            facets = boundary_facets(self.elements, self.dim)
            mask[facets.ravel()] = True
            self._cache["bnd"] = mask
        return self._cache["bnd"]

    def box_constraints(self):
        """Per-node bitmask of box faces the node lies on.

        Bit ``2a`` is the low face of axis ``a``, bit ``2a + 1`` the high face.
        """
        lo, hi = self.domain if self.domain is not None else (
            self.nodes.min(axis=0), self.nodes.max(axis=0))
        mask = np.zeros(self.n_nodes, dtype=np.int64)
        for a in range(self.dim):
            mask |= (self.nodes[:, a] == lo[a]).astype(np.int64) << (2 * a)
            mask |= (self.nodes[:, a] == hi[a]).astype(np.int64) << (2 * a + 1)
        return mask

    def characteristic_volume(self):
        lo, hi = self.nodes.min(axis=0), self.nodes.max(axis=0)
        return float(np.prod(hi - lo)) / max(self.n_elements, 1)

    def is_edge(self, i, j):
        s = self.star(i)
        k = np.searchsorted(s, j)
        return k < s.shape[0] and s[k] == j

    def edge_lengths(self):
        e = self.edges
        return np.linalg.norm(self.nodes[e[:, 1]] - self.nodes[e[:, 0]], axis=1)

    # --- point location / interpolation -------------------------------------
    def barycentric(self, elem, X):
        """Barycentric coordinates of points ``X`` (m, d) in elements ``elem`` (m,)."""
        V = self.nodes[self.elements[elem]]
        T = V[:, 1:, :] - V[:, :1, :]
        rhs = X - V[:, 0, :]
        lam = np.linalg.solve(np.transpose(T, (0, 2, 1)), rhs[..., None])[..., 0]
        return np.column_stack([1.0 - lam.sum(axis=1), lam])

    def locate(self, X, tol=1e-10, n_candidates=12):
        """Element index and barycentric coordinates for every query point.

        Raises :class:`PointLocationError` if a point lies outside the mesh.
        """
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if "centroid_tree" not in self._cache:
            centroids = self.nodes[self.elements].mean(axis=1)
            self._cache["centroid_tree"] = cKDTree(centroids)
        tree = self._cache["centroid_tree"]
        m = X.shape[0]
        found = np.full(m, -1, dtype=np.intp)
        bary = np.zeros((m, self.dim + 1))
        kc = min(n_candidates, self.n_elements)
        _, cand = tree.query(X, k=kc)
        cand = np.asarray(cand).reshape(m, kc)
        for c in range(kc):
            todo = np.flatnonzero(found < 0)
            if todo.size == 0:
                break
            lam = self.barycentric(cand[todo, c], X[todo])
            ok = lam.min(axis=1) >= -tol
            found[todo[ok]] = cand[todo[ok], c]
            bary[todo[ok]] = lam[ok]
        for q in np.flatnonzero(found < 0):
            lam = self.barycentric(np.arange(self.n_elements), np.broadcast_to(X[q], (self.n_elements, self.dim)))
            best = int(np.argmax(lam.min(axis=1)))
            if lam[best].min() < -tol:
                raise PointLocationError(f"point {X[q].tolist()} lies outside the mesh")
            found[q] = best
            bary[q] = lam[best]
        return found, bary

    # --- invariants ---------------------------------------------------------
    def audit(self):
        """Check every structural invariant; raise :class:`MeshError` on failure."""
        d = self.dim
        vol = self.volumes()
        floor = VOLUME_TOL * self.characteristic_volume()
        if self.n_elements and vol.min() <= floor:
            bad = int(np.argmin(vol))
            raise MeshError(f"element {bad} has non-positive volume {vol[bad]:.3e}")
        if np.any(np.sort(self.elements, axis=1)[:, 1:] == np.sort(self.elements, axis=1)[:, :-1]):
            raise MeshError("element with repeated node")
        used = np.zeros(self.n_nodes, dtype=bool)
        used[self.elements.ravel()] = True
        if not used.all():
            raise MeshError(f"orphan node {int(np.argmin(used))}")
        e = self.edges
        if np.any(e[:, 0] >= e[:, 1]) or len(np.unique(e, axis=0)) != len(e):
            raise MeshError("edge list not symmetric-unique")
        ptr, nbr, owner = self._stars()
        pairs = set(map(tuple, e.tolist()))
        for i, j in zip(owner.tolist(), nbr.tolist()):
            if (min(i, j), max(i, j)) not in pairs:
                raise MeshError(f"star of {i} lists {j} without an edge")
        if len(owner) != 2 * len(e):
            raise MeshError("stars and edges disagree in size")
        combos = np.array(list(itertools.combinations(range(d + 1), d)))
        f = np.sort(self.elements[:, combos].reshape(-1, d), axis=1)
        _, counts = np.unique(f, axis=0, return_counts=True)
        if counts.max(initial=0) > 2:
            raise MeshError("non-manifold facet shared by more than two elements")
        if self.domain is not None:
            lo, hi = self.domain
            span = float(np.max(hi - lo))
            if np.any(self.nodes < lo - 1e-12 * span) or np.any(self.nodes > hi + 1e-12 * span):
                raise MeshError("node outside the domain box")
            facets = boundary_facets(self.elements, d)
            cons = self.box_constraints()
            common = np.bitwise_and.reduce(cons[facets], axis=1)
            if np.any(common == 0):
                raise MeshError("boundary facet not lying on a domain face")
        for name, vals in self.fields.items():
            if vals.shape[0] != self.n_nodes or not np.all(np.isfinite(vals)):
                raise MeshError(f"field {name!r} inconsistent with the mesh")
        return True


def generate_box_mesh(lo, hi, target_h, pattern="alternate") -> SimplicialMesh:
    """Structured simplicial mesh of a box.

    Each axis gets ``ceil(extent / target_h)`` cells; quads split into two
    triangles, cubes into six tetrahedra (Freudenthal split), so the longest
    edge is at most ``target_h * sqrt(d)``.

    In 2D ``pattern="alternate"`` flips the quad diagonal in a checkerboard
    ("union jack") so every other interior node has the four-edge star
    ``(+-h, 0), (0, +-h)``; ``pattern="uniform"`` uses the same diagonal
    everywhere.
    """
    if pattern not in ("alternate", "uniform"):
        raise ValueError(f"unknown pattern {pattern!r}")
    lo, hi = check_box(lo, hi)
    target_h = check_positive(target_h, "target_h")
    extent = hi - lo
    if target_h > extent.max():
        raise ValueError("target_h larger than the box")
    d = lo.shape[0]
    counts = np.maximum(1, np.ceil(extent / target_h - 1e-9).astype(int))
    axes = [np.linspace(lo[a], hi[a], counts[a] + 1) for a in range(d)]
    axes = [np.concatenate([[lo[a]], ax[1:-1], [hi[a]]]) for a, ax in enumerate(axes)]
    grid = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([g.ravel() for g in grid], axis=1)
    shape = tuple(counts + 1)

    def node_id(offsets):
        # offsets: (cells, d) integer lattice coords
        return np.ravel_multi_index(tuple(offsets.T), shape)

    cells = np.stack(np.meshgrid(*[np.arange(c) for c in counts], indexing="ij"), axis=-1).reshape(-1, d)
    elems = []
    for perm in itertools.permutations(range(d)):
        path = [np.zeros(d, dtype=int)]
        for a in perm:
            step = path[-1].copy()
            step[a] = 1
            path.append(step)
        elems.append(np.stack([node_id(cells + p) for p in path], axis=1))
    elements = np.concatenate(elems, axis=0)
    if d == 2 and pattern == "alternate":
        odd = np.tile((cells.sum(axis=1) % 2 == 1), 2)
        c = np.concatenate([cells, cells])[odd]
        # anti-diagonal split of the odd cells: (0,0)-(1,0)-(0,1) and (1,0)-(1,1)-(0,1)
        n00, n10 = node_id(c), node_id(c + [1, 0])
        n01, n11 = node_id(c + [0, 1]), node_id(c + [1, 1])
        first = np.arange(odd.sum()) < odd.sum() // 2
        elements[odd] = np.where(first[:, None], np.stack([n00, n10, n01], 1), np.stack([n10, n11, n01], 1))
    return SimplicialMesh(nodes, elements, domain=(lo, hi), repair_orientation=True)


def edge_vector(mesh: SimplicialMesh, i, j):
    """``X[j] - X[i]`` for an existing edge ``{i, j}``."""
    if i == j or not mesh.is_edge(i, j):
        raise MeshError(f"({i}, {j}) is not an edge")
    return mesh.nodes[j] - mesh.nodes[i]


def interpolate(mesh: SimplicialMesh, field, X):
    """P1 (barycentric) interpolation of a nodal field at points ``X``."""
    values = mesh.fields[field] if isinstance(field, str) else np.asarray(field, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    elem, bary = mesh.locate(X)
    out = (values[mesh.elements[elem]] * bary).sum(axis=1)
    return float(out[0]) if single else out


def element_aspect_ratios(nodes, elements):
    """Longest edge over the inradius, normalised to 1 for the regular simplex."""
    nodes = np.asarray(nodes, dtype=np.float64)
    elements = np.asarray(elements, dtype=np.intp)
    d = nodes.shape[1]
    vol = np.abs(signed_volumes(nodes, elements))
    pairs = list(itertools.combinations(range(d + 1), 2))
    lengths = np.stack([np.linalg.norm(nodes[elements[:, b]] - nodes[elements[:, a]], axis=1)
                        for a, b in pairs], axis=1)
    if d == 2:
        perimeter = lengths.sum(axis=1)
        inradius = 2.0 * vol / perimeter
        norm = 2.0 * math.sqrt(3.0)
    else:
        faces = list(itertools.combinations(range(4), 3))
        area = np.zeros(len(elements))
        for f in faces:
            a, b, c = (nodes[elements[:, k]] for k in f)
            area += 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
        inradius = 3.0 * vol / area
        norm = 2.0 * math.sqrt(6.0)
    with np.errstate(divide="ignore"):
        return lengths.max(axis=1) / (norm * inradius)
