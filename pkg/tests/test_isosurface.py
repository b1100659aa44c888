import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eimlsmesh.isosurface import (extract_contour_2d, extract_surface_3d, nudge_zeros,
                                  one_sided_hausdorff, polyline_area, sample_polylines,
                                  write_polylines_csv, write_polylines_vtk, write_surface_ply,
                                  write_surface_vtk)
from eimlsmesh.mesh import SimplicialMesh, generate_box_mesh

from oracles import circle_area, shoelace, sphere_area

TET = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])


def edge_residuals(mesh, f, vertices):
    """For every extracted vertex: the smallest |linear interpolant| over sign-changing edges
    whose segment contains it."""
    E = mesh.edges
    a, b = mesh.nodes[E[:, 0]], mesh.nodes[E[:, 1]]
    change = (f[E[:, 0]] < 0) != (f[E[:, 1]] < 0)
    out = []
    for v in vertices:
        best = math.inf
        for k in np.flatnonzero(change):
            d = b[k] - a[k]
            t = float((v - a[k]) @ d / (d @ d))
            if 0 <= t <= 1 and np.linalg.norm(a[k] + t * d - v) < 1e-12:
                best = min(best, abs((1 - t) * f[E[k, 0]] + t * f[E[k, 1]]))
        out.append(best)
    return np.array(out)


def test_all_positive_is_empty():
    mesh = generate_box_mesh([0, 0], [1, 1], 0.25)
    assert extract_contour_2d(mesh, np.ones(mesh.n_nodes)) == []
    cube = generate_box_mesh([0, 0, 0], [1, 1, 1], 0.5)
    assert extract_surface_3d(cube, np.ones(cube.n_nodes)).triangles.shape == (0, 3)


def test_single_triangle():
    mesh = SimplicialMesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    lines = extract_contour_2d(mesh, np.array([-1.0, 1.0, 1.0]))
    assert len(lines) == 1 and not lines[0].closed
    assert sorted(map(tuple, lines[0].points.tolist())) == [(0.0, 0.5), (0.5, 0.0)]


def test_tet_cases():
    mesh = SimplicialMesh(TET, [[0, 1, 2, 3]])
    one = extract_surface_3d(mesh, np.array([-1.0, 1, 1, 1]))
    assert one.triangles.shape[0] == 1
    assert np.allclose(sorted(one.vertices.tolist()), sorted([[0.5, 0, 0], [0, 0.5, 0], [0, 0, 0.5]]))
    two = extract_surface_3d(mesh, np.array([-1.0, -1, 1, 1]))
    assert two.triangles.shape[0] == 2 and two.vertices.shape[0] == 4
    three = extract_surface_3d(mesh, np.array([-1.0, -1, -1, 1]))
    assert three.triangles.shape[0] == 1


def test_triangle_normal_points_to_positive_side():
    mesh = SimplicialMesh(TET, [[0, 1, 2, 3]])
    s = extract_surface_3d(mesh, np.array([-1.0, 1, 1, 1]))
    a, b, c = s.vertices[s.triangles[0]]
    assert np.cross(b - a, c - a) @ np.ones(3) > 0


def test_exact_zero_nudged():
    f = nudge_zeros(np.array([0.0, -2.0, 4.0]))
    assert f[0] == 4e-12
    with pytest.raises(ValueError):
        nudge_zeros(np.array([np.nan, 1.0]))
    mesh = SimplicialMesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    assert extract_contour_2d(mesh, np.array([0.0, 1.0, 1.0])) == []


def test_circle_on_grid():
    mesh = generate_box_mesh([-1, -1], [1, 1], 0.02)
    f = np.linalg.norm(mesh.nodes, axis=1) - 0.5
    lines = extract_contour_2d(mesh, f)
    assert len(lines) == 1 and lines[0].closed
    assert abs(polyline_area(lines) / circle_area(0.5) - 1) < 0.02
    assert math.isclose(lines[0].signed_area, shoelace(lines[0].points.tolist()), rel_tol=1e-12)
    assert lines[0].signed_area > 0
    assert abs(lines[0].length / (math.pi) - 1) < 0.01


def test_two_circles_two_contours():
    mesh = generate_box_mesh([-1, -1], [1, 1], 0.05)
    f = np.minimum(np.linalg.norm(mesh.nodes - [-0.5, 0], axis=1),
                   np.linalg.norm(mesh.nodes - [0.5, 0], axis=1)) - 0.3
    lines = extract_contour_2d(mesh, f)
    assert len(lines) == 2 and all(p.closed for p in lines)


def test_open_contour_reaching_boundary():
    mesh = generate_box_mesh([0, 0], [1, 1], 0.1)
    lines = extract_contour_2d(mesh, mesh.nodes[:, 1] - 0.53)
    assert len(lines) == 1 and not lines[0].closed
    assert np.allclose(lines[0].points[:, 1], 0.53)


def test_sphere_on_grid():
    mesh = generate_box_mesh([-1, -1, -1], [1, 1, 1], 0.1)
    f = np.linalg.norm(mesh.nodes, axis=1) - 0.5
    s = extract_surface_3d(mesh, f)
    assert s.is_closed() and s.euler_characteristic() == 2
    assert abs(s.area() / sphere_area(0.5) - 1) < 0.05
    a, b, c = (s.vertices[s.triangles[:, k]] for k in range(3))
    outward = np.einsum("ij,ij->i", np.cross(b - a, c - a), (a + b + c) / 3)
    assert np.all(outward > 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from([2, 3]))
def test_vertices_are_linear_roots_and_case_counts(seed, dim):
    rng = np.random.default_rng(seed)
    mesh = generate_box_mesh([0] * dim, [1] * dim, 0.34)
    f = rng.normal(size=mesh.n_nodes)
    if dim == 2:
        lines = extract_contour_2d(mesh, f)
        verts = np.vstack([p.points for p in lines]) if lines else np.zeros((0, 2))
    else:
        surf = extract_surface_3d(mesh, f)
        verts = surf.vertices
    scale = np.abs(f).max()
    assert np.all(edge_residuals(mesh, f, verts) < 1e-12 * scale)
    neg = f[mesh.elements] < 0
    E = mesh.elements
    for k in range(len(E)):
        n_cross = sum(neg[k, p] != neg[k, q] for p in range(dim + 1) for q in range(p + 1, dim + 1))
        assert n_cross in ((0, 2) if dim == 2 else (0, 3, 4))
    if dim == 3 and verts.size:
        _, counts = surf.edge_counts()
        assert counts.max() <= 2


def test_hausdorff_and_sampling():
    mesh = generate_box_mesh([-1, -1], [1, 1], 0.05)
    lines = extract_contour_2d(mesh, np.linalg.norm(mesh.nodes, axis=1) - 0.5)
    samples = sample_polylines(lines, 0.01)
    assert samples.shape[0] > 300
    theta = np.linspace(0, 2 * np.pi, 4000, endpoint=False)
    circle = 0.5 * np.column_stack([np.cos(theta), np.sin(theta)])
    assert one_sided_hausdorff(samples, circle) < 0.01
    assert one_sided_hausdorff(circle[:1], circle) == 0.0


def test_writers(tmp_path):
    mesh = generate_box_mesh([-1, -1], [1, 1], 0.2)
    lines = extract_contour_2d(mesh, np.linalg.norm(mesh.nodes, axis=1) - 0.5)
    write_polylines_csv(tmp_path / "c.csv", lines)
    rows = (tmp_path / "c.csv").read_text().strip().split("\n")
    assert rows[0] == "polyline,closed,x,y" and len(rows) == 1 + len(lines[0].points)
    write_polylines_vtk(tmp_path / "c.vtk", lines)
    assert "POLYDATA" in (tmp_path / "c.vtk").read_text()
    cube = generate_box_mesh([-1, -1, -1], [1, 1, 1], 0.25)
    surf = extract_surface_3d(cube, np.linalg.norm(cube.nodes, axis=1) - 0.5)
    write_surface_vtk(tmp_path / "s.vtk", surf)
    write_surface_ply(tmp_path / "s.ply", surf)
    head = (tmp_path / "s.ply").read_bytes()[:200].decode("ascii", "replace")
    assert head.startswith("ply") and f"element face {surf.triangles.shape[0]}" in head
