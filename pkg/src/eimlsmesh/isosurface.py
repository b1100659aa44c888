"""Zero level set extraction from nodal fields on simplicial meshes.

2D uses marching triangles and returns polylines stitched through shared
edge crossings. 3D uses marching tetrahedra and returns an indexed triangle
mesh whose vertices are welded by mesh edge. Each crossing is computed once
per mesh edge, from its lower-index end, so welding is exact.

Polylines are oriented with the negative region on their left, so a closed
contour around a negative (inside) region has positive signed area.
Triangles are oriented with normals pointing to the positive side.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .mesh import SimplicialMesh


@dataclass
class Polyline:
    points: np.ndarray
    closed: bool

    @property
    def length(self) -> float:
        P = np.vstack([self.points, self.points[:1]]) if self.closed else self.points
        return float(np.linalg.norm(np.diff(P, axis=0), axis=1).sum())

    @property
    def signed_area(self) -> float:
        """Shoelace area; meaningful for closed polylines only."""
        x, y = self.points[:, 0], self.points[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass
class TriangleSurface:
    vertices: np.ndarray
    triangles: np.ndarray

    def area(self) -> float:
        if self.triangles.shape[0] == 0:
            return 0.0
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * float(np.linalg.norm(np.cross(b - a, c - a), axis=1).sum())

    def edge_counts(self):
        """Unique undirected edges and how many triangles use each."""
        e = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        return np.unique(e, axis=0, return_counts=True)

    def is_closed(self) -> bool:
        if self.triangles.shape[0] == 0:
            return False
        _, counts = self.edge_counts()
        return bool(np.all(counts == 2))

    def euler_characteristic(self) -> int:
        edges, _ = self.edge_counts()
        used = np.unique(self.triangles)
        return int(used.size - edges.shape[0] + self.triangles.shape[0])


def nudge_zeros(values):
    """Replace exact zeros by ``1e-12 * max|values|`` so no node sits on the level set."""
    f = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise ValueError("level-set field must be finite")
    scale = float(np.abs(f).max(initial=0.0))
    bump = 1e-12 * scale if scale > 0 else 1e-300
    return np.where(f == 0.0, bump, f)


def _field_values(mesh, field):
    f = mesh.fields[field] if isinstance(field, str) else np.asarray(field, dtype=np.float64)
    if f.shape != (mesh.n_nodes,):
        raise ValueError("field must have one value per node")
    return nudge_zeros(f)


def _crossings(nodes, f, edges):
    """Linear zero crossing on each edge, computed from the lower node index."""
    a, b = edges[:, 0], edges[:, 1]
    out = np.full((edges.shape[0], nodes.shape[1]), np.nan)
    s = (f[a] < 0) != (f[b] < 0)
    a, b = a[s], b[s]
    t = f[a] / (f[a] - f[b])
    out[s] = nodes[a] + t[:, None] * (nodes[b] - nodes[a])
    return out


def _edge_ids(elements, pairs, edges, n_nodes):
    """Index into ``edges`` of each local edge ``pairs`` of every element."""
    keys = edges[:, 0].astype(np.int64) * n_nodes + edges[:, 1]
    out = np.empty((elements.shape[0], len(pairs)), dtype=np.intp)
    for c, (p, q) in enumerate(pairs):
        u = np.minimum(elements[:, p], elements[:, q]).astype(np.int64)
        v = np.maximum(elements[:, p], elements[:, q])
        out[:, c] = np.searchsorted(keys, u * n_nodes + v)
    return out


def extract_contour_2d(mesh: SimplicialMesh, field) -> list:
    """Zero level set of a nodal field on a triangle mesh, as a list of polylines."""
    if mesh.dim != 2:
        raise ValueError("extract_contour_2d needs a 2D mesh")
    f = _field_values(mesh, field)
    E = mesh.elements
    neg = f[E] < 0
    cut = np.flatnonzero((neg.sum(1) == 1) | (neg.sum(1) == 2))
    if cut.size == 0:
        return []
    edges = mesh.edges
    pairs = [(1, 2), (2, 0), (0, 1)]  # local edge c is opposite vertex c
    eid = _edge_ids(E[cut], pairs, edges, mesh.n_nodes)
    sub_neg = neg[cut]
    # the vertex whose sign differs from the other two
    lone = np.where(sub_neg.sum(1) == 1, np.argmax(sub_neg, 1), np.argmin(sub_neg, 1))
    rows = np.arange(cut.size)
    # crossings are on the two edges touching the lone vertex: local edges lone+1, lone+2
    e1 = eid[rows, (lone + 1) % 3]
    e2 = eid[rows, (lone + 2) % 3]
    pts = _crossings(mesh.nodes, f, edges)
    p, q = pts[e1], pts[e2]
    xk = mesh.nodes[E[cut, lone]]
    cross = (q[:, 0] - p[:, 0]) * (xk[:, 1] - p[:, 1]) - (q[:, 1] - p[:, 1]) * (xk[:, 0] - p[:, 0])
    lone_neg = sub_neg[rows, lone]
    # negative region on the left of start -> end
    swap = (cross > 0) != lone_neg
    start = np.where(swap, e2, e1)
    end = np.where(swap, e1, e2)

    nxt = dict(zip(start.tolist(), end.tolist()))
    has_pred = set(end.tolist())
    used = set()
    out = []

    def walk(s):
        chain = [s]
        used.add(s)
        cur = s
        while cur in nxt:
            cur = nxt[cur]
            if cur == s:
                return chain, True
            chain.append(cur)
            if cur in used:
                break
            used.add(cur)
        return chain, False

    for s in sorted(set(nxt) - has_pred):
        chain, closed = walk(s)
        out.append(Polyline(pts[chain], closed))
    for s in sorted(nxt):
        if s not in used:
            chain, closed = walk(s)
            out.append(Polyline(pts[chain], closed))
    return out


def extract_surface_3d(mesh: SimplicialMesh, field) -> TriangleSurface:
    """Zero level set of a nodal field on a tetrahedral mesh (marching tetrahedra)."""
    if mesh.dim != 3:
        raise ValueError("extract_surface_3d needs a 3D mesh")
    f = _field_values(mesh, field)
    E = mesh.elements
    neg = f[E] < 0
    count = neg.sum(1)
    edges = mesh.edges
    pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    local = {pr: c for c, pr in enumerate(pairs)}
    pts_all = _crossings(mesh.nodes, f, edges)
    tris = []
    cut = np.flatnonzero((count > 0) & (count < 4))
    all_ids = _edge_ids(E[cut], pairs, edges, mesh.n_nodes)
    for row, k in enumerate(cut.tolist()):
        ng = [a for a in range(4) if neg[k, a]]
        ps = [a for a in range(4) if not neg[k, a]]
        ids = all_ids[row]

        def cid(a, b):
            return int(ids[local[(min(a, b), max(a, b))]])

        if len(ng) == 1 or len(ps) == 1:
            lone = ng[0] if len(ng) == 1 else ps[0]
            others = [a for a in range(4) if a != lone]
            tris.append((cid(lone, others[0]), cid(lone, others[1]), cid(lone, others[2]), k))
        else:
            a, b = ng
            c, d = ps
            q = (cid(a, c), cid(a, d), cid(b, d), cid(b, c))
            tris.append((q[0], q[1], q[2], k))
            tris.append((q[0], q[2], q[3], k))
    if not tris:
        return TriangleSurface(np.empty((0, 3)), np.empty((0, 3), dtype=np.intp))
    T = np.asarray(tris, dtype=np.intp)
    ids, elem = T[:, :3], T[:, 3]
    # orient normals towards the positive side
    a, b, c = pts_all[ids[:, 0]], pts_all[ids[:, 1]], pts_all[ids[:, 2]]
    normal = np.cross(b - a, c - a)
    Ek = E[elem]
    fk = f[Ek]
    xk = mesh.nodes[Ek]
    centre_pos = (xk * (fk > 0)[:, :, None]).sum(1) / (fk > 0).sum(1)[:, None]
    centre_neg = (xk * (fk < 0)[:, :, None]).sum(1) / (fk < 0).sum(1)[:, None]
    flip = np.einsum("ij,ij->i", normal, centre_pos - centre_neg) < 0
    ids[flip] = ids[flip][:, [0, 2, 1]]
    used, inverse = np.unique(ids, return_inverse=True)
    return TriangleSurface(pts_all[used], inverse.reshape(-1, 3))


def polyline_area(polylines) -> float:
    """Total absolute enclosed area of the closed polylines."""
    return float(sum(abs(p.signed_area) for p in polylines if p.closed))


def polyline_length(polylines) -> float:
    return float(sum(p.length for p in polylines))


def sample_polylines(polylines, spacing):
    """Points along every polyline segment, at most ``spacing`` apart."""
    chunks = []
    for p in polylines:
        P = np.vstack([p.points, p.points[:1]]) if p.closed else p.points
        if P.shape[0] == 1:
            chunks.append(P)
            continue
        seg = np.diff(P, axis=0)
        n = np.maximum(np.ceil(np.linalg.norm(seg, axis=1) / spacing).astype(int), 1)
        for s, d, m in zip(P[:-1], seg, n):
            t = np.arange(m)[:, None] / m
            chunks.append(s + t * d)
        chunks.append(P[-1:])
    if not chunks:
        return np.empty((0, 2))
    return np.vstack(chunks)


def sample_surface(surface: TriangleSurface, spacing):
    """Vertices plus barycentric samples on each triangle, at most about ``spacing`` apart."""
    V, T = surface.vertices, surface.triangles
    chunks = [V]
    for tri in T:
        a, b, c = V[tri]
        m = int(np.ceil(max(np.linalg.norm(b - a), np.linalg.norm(c - a), np.linalg.norm(c - b)) / spacing))
        if m <= 1:
            continue
        i, j = np.meshgrid(np.arange(m + 1), np.arange(m + 1), indexing="ij")
        keep = (i + j) <= m
        u, v = i[keep] / m, j[keep] / m
        chunks.append(a + u[:, None] * (b - a) + v[:, None] * (c - a))
    return np.vstack(chunks)


def one_sided_hausdorff(points, targets) -> float:
    """``max_p min_t |p - t|``: how far the ``points`` stray from ``targets``."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] == 0:
        return 0.0
    d, _ = cKDTree(np.asarray(targets, dtype=np.float64)).query(points)
    return float(d.max())


def write_polylines_csv(path, polylines) -> None:
    with open(path, "w") as fh:
        fh.write("polyline,closed,x,y\n")
        for k, p in enumerate(polylines):
            for x, y in p.points:
                fh.write(f"{k},{int(p.closed)},{x!r},{y!r}\n")


def _vtk_points(out, P):
    out.append(f"POINTS {P.shape[0]} double")
    for p in P:
        xyz = list(p) + [0.0] * (3 - len(p))
        out.append(" ".join(repr(float(v)) for v in xyz))


def write_polylines_vtk(path, polylines) -> None:
    out = ["# vtk DataFile Version 3.0", "zero level set", "ASCII", "DATASET POLYDATA"]
    P = np.vstack([p.points for p in polylines]) if polylines else np.empty((0, 2))
    _vtk_points(out, P)
    lines, base = [], 0
    for p in polylines:
        idx = list(range(base, base + p.points.shape[0]))
        if p.closed:
            idx.append(base)
        lines.append(idx)
        base += p.points.shape[0]
    out.append(f"LINES {len(lines)} {sum(len(l) + 1 for l in lines)}")
    out.extend(f"{len(l)} " + " ".join(map(str, l)) for l in lines)
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def write_surface_vtk(path, surface: TriangleSurface) -> None:
    out = ["# vtk DataFile Version 3.0", "zero level set", "ASCII", "DATASET POLYDATA"]
    _vtk_points(out, surface.vertices)
    T = surface.triangles
    out.append(f"POLYGONS {T.shape[0]} {4 * T.shape[0]}")
    out.extend(f"3 {a} {b} {c}" for a, b, c in T.tolist())
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def write_surface_ply(path, surface: TriangleSurface) -> None:
    V, T = surface.vertices, surface.triangles
    head = ["ply", "format ascii 1.0", f"element vertex {V.shape[0]}",
            "property double x", "property double y", "property double z",
            f"element face {T.shape[0]}", "property list uchar int vertex_indices", "end_header"]
    with open(path, "w") as fh:
        fh.write("\n".join(head) + "\n")
        for x, y, z in V.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")
        for a, b, c in T.tolist():
            fh.write(f"3 {a} {b} {c}\n")
