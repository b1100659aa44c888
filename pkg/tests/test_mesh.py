import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eimlsmesh.mesh import (MeshError, PointLocationError, SimplicialMesh, edge_vector,
                            element_aspect_ratios, generate_box_mesh, interpolate)
from eimlsmesh.mesh_io import load_mesh, save_mesh

from oracles import aspect_ratio_triangle

GOLDEN_VTK = """# vtk DataFile Version 3.0
eimlsmesh
ASCII
DATASET UNSTRUCTURED_GRID
POINTS 3 double
0.0 0.0 0.0
1.0 0.0 0.0
0.0 1.0 0.0
CELLS 1 4
3 0 1 2
CELL_TYPES 1
5
POINT_DATA 3
SCALARS u double 1
LOOKUP_TABLE default
1.0
2.0
3.5
"""


def test_unit_square_counts():
    mesh = generate_box_mesh([0, 0], [1, 1], 0.5)
    assert mesh.n_nodes == 9 and mesh.n_elements == 8
    mesh.audit()


def test_unit_cube_counts_and_volume():
    mesh = generate_box_mesh([0, 0, 0], [1, 1, 1], 1.0)
    assert mesh.n_nodes == 8 and mesh.n_elements == 6
    assert abs(mesh.volumes().sum() - 1.0) < 1e-12
    mesh.audit()


@pytest.mark.parametrize("pattern", ["alternate", "uniform"])
def test_unit_square_edge_lengths(pattern):
    mesh = generate_box_mesh([0, 0], [1, 1], 0.5, pattern=pattern)
    lengths = mesh.edge_lengths()
    assert np.all(np.isclose(lengths, 0.5) | np.isclose(lengths, 0.5 * math.sqrt(2)))


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([2, 3]), st.floats(0.5, 3.0), st.floats(0.5, 3.0), st.floats(0.5, 3.0),
       st.floats(0.15, 0.6), st.floats(-5, 5))
def test_generated_meshes_are_valid(dim, a, b, c, h, shift):
    lo = np.full(dim, shift)
    hi = lo + np.array([a, b, c][:dim])
    mesh = generate_box_mesh(lo, hi, h)
    mesh.audit()
    assert math.isclose(mesh.volumes().sum(), float(np.prod(hi - lo)), rel_tol=1e-10)
    assert mesh.edge_lengths().max() <= h * math.sqrt(dim) * (1 + 1e-12)


def test_degenerate_box_rejected():
    with pytest.raises(ValueError):
        generate_box_mesh([0, 0], [1, 0], 0.1)
    with pytest.raises(ValueError):
        generate_box_mesh([0, 0], [1, 1], 0.0)


def test_star_matches_edges():
    mesh = generate_box_mesh([0, 0, 0], [1, 1, 1], 0.5)
    pairs = set(map(tuple, mesh.edges.tolist()))
    for i in range(mesh.n_nodes):
        assert set(mesh.star(i).tolist()) == {j for a, b in pairs for j in (a, b) if i in (a, b) and j != i}


def test_alternate_pattern_has_four_edge_stars():
    mesh = generate_box_mesh([0, 0], [1, 1], 0.1)
    sizes = mesh.star_sizes()
    interior = ~mesh.boundary_nodes()
    assert set(sizes[interior].tolist()) == {4, 8}


def test_edge_vector():
    mesh = SimplicialMesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    assert edge_vector(mesh, 0, 1).tolist() == [1.0, 0.0]
    assert np.array_equal(edge_vector(mesh, 1, 2), -edge_vector(mesh, 2, 1))
    square = generate_box_mesh([0, 0], [1, 1], 0.5)
    with pytest.raises(MeshError):
        edge_vector(square, 0, 8)


def test_invalid_meshes_detected():
    with pytest.raises(MeshError):
        SimplicialMesh([[0, 0], [1, 0], [0, 1]], [[0, 2, 1]]).audit()
    with pytest.raises(MeshError):
        SimplicialMesh([[0, 0], [1, 0], [0, 1], [5, 5]], [[0, 1, 2]]).audit()
    with pytest.raises(MeshError):
        SimplicialMesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 3]])
    fixed = SimplicialMesh([[0, 0], [1, 0], [0, 1]], [[0, 2, 1]], repair_orientation=True)
    assert fixed.audit()


def test_interpolation():
    mesh = generate_box_mesh([0, 0], [1, 1], 0.1)
    x, y = mesh.nodes.T
    mesh.set_field("u", 2 * x + 3 * y)
    assert interpolate(mesh, "u", mesh.nodes[17]) == mesh.fields["u"][17]
    X = np.random.default_rng(0).uniform(0, 1, (500, 2))
    assert np.max(np.abs(interpolate(mesh, "u", X) - (2 * X[:, 0] + 3 * X[:, 1]))) < 1e-12
    mesh.set_field("v", np.sin(7 * x) * y)
    i, j = mesh.edges[40]
    mid = 0.5 * (mesh.nodes[i] + mesh.nodes[j])
    assert math.isclose(interpolate(mesh, "v", mid), 0.5 * (mesh.fields["v"][i] + mesh.fields["v"][j]),
                        abs_tol=1e-14)
    with pytest.raises(PointLocationError):
        interpolate(mesh, "u", np.array([2.0, 2.0]))


def test_field_length_checked():
    mesh = generate_box_mesh([0, 0], [1, 1], 0.5)
    with pytest.raises(MeshError):
        mesh.set_field("u", np.zeros(3))
    with pytest.raises(ValueError):
        mesh.set_field("u", np.full(9, np.nan))


def test_golden_vtk(tmp_path):
    mesh = SimplicialMesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], fields={"u": [1.0, 2.0, 3.5]})
    path = tmp_path / "m.vtk"
    save_mesh(mesh, path)
    assert path.read_text() == GOLDEN_VTK
    back = load_mesh(path)
    assert np.array_equal(back.elements, mesh.elements)
    assert np.array_equal(back.fields["u"], mesh.fields["u"])


@pytest.mark.parametrize("suffix", [".json", ".vtk"])
@pytest.mark.parametrize("dim", [2, 3])
def test_round_trip(tmp_path, suffix, dim):
    mesh = generate_box_mesh([0] * dim, [1] * dim, 0.5)
    rng = np.random.default_rng(dim)
    mesh.set_field("alpha", rng.normal(size=mesh.n_nodes))
    A = rng.normal(size=(mesh.n_nodes, dim, dim))
    mesh.set_metric(A @ np.swapaxes(A, 1, 2) + np.eye(dim))
    path = tmp_path / ("m" + suffix)
    save_mesh(mesh, path)
    back = load_mesh(path)
    assert np.array_equal(back.elements, mesh.elements)
    assert np.max(np.abs(back.fields["alpha"] - mesh.fields["alpha"])) <= 1e-12
    assert np.max(np.abs(back.metric - mesh.metric)) <= 1e-12
    if suffix == ".json":
        assert np.array_equal(back.nodes, mesh.nodes)
        assert np.array_equal(back.fields["alpha"], mesh.fields["alpha"])


def test_json_rejects_garbage(tmp_path):
    path = tmp_path / "m.json"
    path.write_text("{not json")
    with pytest.raises(MeshError):
        load_mesh(path)


def test_aspect_ratio_matches_oracle():
    rng = np.random.default_rng(0)
    nodes = rng.uniform(size=(30, 2))
    elements = np.array([c for c in itertools.combinations(range(30), 3)][:50])
    mesh = SimplicialMesh(nodes, elements, repair_orientation=True)
    got = element_aspect_ratios(mesh.nodes, mesh.elements)
    ref = [aspect_ratio_triangle(*nodes[e]) for e in mesh.elements]
    assert np.allclose(got, ref, rtol=1e-9)
    eq = np.array([[0, 0], [1, 0], [0.5, math.sqrt(3) / 2]])
    assert math.isclose(element_aspect_ratios(eq, [[0, 1, 2]])[0], 1.0)
    tet = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1.0]])
    assert math.isclose(element_aspect_ratios(tet, [[0, 1, 2, 3]])[0], 1.0)
