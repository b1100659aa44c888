"""Independent reference computations used to check the package.

Everything here is brute force or closed form and shares no code with
``eimlsmesh`` beyond plain numpy.
"""

import math
from collections import deque

import numpy as np


def brute_knn(points, x, k):
    """Indices and squared distances of the k nearest points, ties by lowest index."""
    d2 = [float(sum((float(p) - float(q)) ** 2 for p, q in zip(pt, x))) for pt in points]
    order = sorted(range(len(points)), key=lambda i: (d2[i], i))[:k]
    return order, [d2[i] for i in order]


def brute_knn_batch(points, X, k):
    d2 = ((X[:, None, :] - points[None, :, :]) ** 2).sum(-1)
    idx = np.arange(points.shape[0])
    out = np.empty((X.shape[0], k), dtype=int)
    for r in range(X.shape[0]):
        out[r] = np.lexsort((idx, d2[r]))[:k]
    return out


def brute_kth_distance(points, k):
    d = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(-1))
    d.sort(axis=1)
    return d[:, k]


def gaussian(x):
    return math.exp(-0.5 * x * x)


def brute_eimls(points, normals, x, h0, gamma=7.0, k=None):
    """Weighted mean of tangent-plane distances with the extended bandwidth.

    Uses every point when ``k`` is None, otherwise the k nearest by sorting.
    """
    lg = math.sqrt(2.0 * gamma * math.log(10.0))
    dists = [math.dist(p, x) for p in points]
    h = max(min(dists) / lg, h0)
    order = sorted(range(len(points)), key=lambda i: (dists[i], i))
    if k is not None:
        order = order[:k]
    num = den = 0.0
    for i in order:
        w = gaussian(dists[i] / h)
        num += w * sum((xc - pc) * nc for xc, pc, nc in zip(x, points[i], normals[i]))
        den += w
    return num / den


def brute_plain_imls(points, normals, x, h, gamma=7.0):
    """Constant-bandwidth IMLS over all points; None where every weight is below 10^-gamma."""
    floor = 10.0 ** (-gamma)
    num = den = 0.0
    for p, n in zip(points, normals):
        w = gaussian(math.dist(p, x) / h)
        if w < floor:
            continue
        num += w * sum((xc - pc) * nc for xc, pc, nc in zip(x, p, n))
        den += w
    return None if den == 0.0 else num / den


def cell_hash_count(points, leaf):
    return len({tuple(int(math.floor(c / leaf)) for c in p) for p in points})


def exterior_regions(sign_grid):
    """Number of 4-connected components of the positive cells that touch the grid border,
    and the total number of positive components."""
    pos = np.asarray(sign_grid) > 0
    ny, nx = pos.shape
    label = -np.ones(pos.shape, dtype=int)
    comps = []
    for sy in range(ny):
        for sx in range(nx):
            if not pos[sy, sx] or label[sy, sx] >= 0:
                continue
            cid = len(comps)
            label[sy, sx] = cid
            border = False
            queue = deque([(sy, sx)])
            while queue:
                y, x = queue.popleft()
                if y in (0, ny - 1) or x in (0, nx - 1):
                    border = True
                for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < ny and 0 <= xx < nx and pos[yy, xx] and label[yy, xx] < 0:
                        label[yy, xx] = cid
                        queue.append((yy, xx))
            comps.append(border)
    return sum(comps), len(comps)


def circle_distance(points, radius, center=(0.0, 0.0)):
    p = np.asarray(points, dtype=float) - np.asarray(center)
    return np.abs(np.linalg.norm(p, axis=1) - radius)


def circle_area(radius):
    return math.pi * radius * radius


def sphere_area(radius):
    return 4.0 * math.pi * radius * radius


def shoelace(poly):
    s = 0.0
    n = len(poly)
    for a in range(n):
        x0, y0 = poly[a]
        x1, y1 = poly[(a + 1) % n]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


def aspect_ratio_triangle(a, b, c):
    """Longest edge over inradius scaled to 1 for the equilateral triangle."""
    la, lb, lc = math.dist(b, c), math.dist(a, c), math.dist(a, b)
    s = 0.5 * (la + lb + lc)
    area = math.sqrt(max(s * (s - la) * (s - lb) * (s - lc), 0.0))
    return max(la, lb, lc) / (2.0 * math.sqrt(3.0) * area / s)


def oracle_target(mesh, errors, N):
    """Target metric and error level by per-node loops over the printed formulas."""
    d = mesh.dim
    stars = [[] for _ in range(mesh.n_nodes)]
    for (i, j), e in zip(mesh.edges, errors):
        X = mesh.nodes[j] - mesh.nodes[i]
        stars[i].append((X, e))
        stars[j].append((X, e))
    n1 = []
    for s in stars:
        A = sum(np.outer(X, X) / (X @ X) for X, _ in s)
        B = sum(math.sqrt(e) * np.outer(X, X) / (X @ X) for X, e in s)
        n1.append(max(np.linalg.det(np.linalg.inv(A) @ B), 0.0))
    level = (sum(n1) / N) ** (2 / d)
    emax = max(errors)
    T = []
    for s in stars:
        S = sum(np.outer(X, X) / max(e, 1e-6 * emax) for X, e in s)
        T.append(len(s) / d / level * np.linalg.inv(S))
    return level, np.array(T), np.array(n1)


def hausdorff_to_circle(samples, radius, center=(0.0, 0.0), n_circle=20000):
    """Symmetric Hausdorff distance between dense contour samples and the exact circle."""
    from scipy.spatial import cKDTree

    samples = np.asarray(samples, dtype=float)
    forward = float(circle_distance(samples, radius, center).max())
    t = 2.0 * math.pi * np.arange(n_circle) / n_circle
    ring = np.asarray(center) + radius * np.column_stack([np.cos(t), np.sin(t)])
    backward = float(cKDTree(samples).query(ring)[0].max())
    return max(forward, backward)
