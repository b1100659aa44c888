import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eimlsmesh.mesh import SimplicialMesh, generate_box_mesh
from eimlsmesh.metric import (MetricField, edge_errors, intersect_metrics, metric_edge_lengths,
                              recover_gradient, regularize, target_metric, unit_metric)

from meshes import perturbed_mesh
from oracles import oracle_target


def oracle_gradient(nodes, star, U, i):
    """Normal equations solved for one node by plain loops."""
    d = nodes.shape[1]
    A = np.zeros((d, d))
    b = np.zeros(d)
    for j in star:
        X = nodes[j] - nodes[i]
        A += np.outer(X, X)
        b += (U[j] - U[i]) * X
    return np.linalg.solve(A, b)


def test_constant_field_zero_gradient():
    mesh = perturbed_mesh(2, 0.1, 0)
    assert np.max(np.abs(recover_gradient(mesh, np.full(mesh.n_nodes, 3.7)))) == 0.0


@pytest.mark.parametrize("dim", [2, 3])
def test_gradient_matches_loop_oracle(dim):
    mesh = perturbed_mesh(dim, 0.25, 1)
    U = np.sin(3 * mesh.nodes).sum(axis=1)
    G = recover_gradient(mesh, U)
    for i in range(0, mesh.n_nodes, 7):
        assert np.allclose(G[i], oracle_gradient(mesh.nodes, mesh.star(i), U, i), rtol=1e-10, atol=1e-12)


def test_quadratic_strip_gradient_and_errors():
    h = 0.1
    mesh = generate_box_mesh([0, 0], [1, 1], h)
    x = mesh.nodes[:, 0]
    G = recover_gradient(mesh, x ** 2)
    inner = ~mesh.boundary_nodes()
    assert np.allclose(G[inner, 0], 2 * x[inner], atol=1e-12)
    assert np.allclose(G[inner, 1], 0, atol=1e-12)
    e = edge_errors(mesh, G)
    E = mesh.edges
    both_inner = inner[E[:, 0]] & inner[E[:, 1]]
    dx = np.abs(mesh.nodes[E[:, 1], 0] - mesh.nodes[E[:, 0], 0])
    along = both_inner & (dx > h / 2)
    assert np.allclose(e[along], 2 * h * h, rtol=1e-10)
    assert np.allclose(e[both_inner & (dx < h / 2)], 0, atol=1e-14)


def test_linear_field_zero_errors_and_scaling():
    mesh = perturbed_mesh(2, 0.1, 2)
    x, y = mesh.nodes.T
    assert np.max(edge_errors(mesh, recover_gradient(mesh, 1.5 * x - 2 * y + 4))) < 1e-12
    U = np.cos(4 * x) * y
    e1 = edge_errors(mesh, recover_gradient(mesh, U))
    e2 = edge_errors(mesh, recover_gradient(mesh, -3.0 * U))
    assert np.allclose(e2, 3.0 * e1, rtol=1e-10, atol=1e-15)
    assert np.all(e1 >= 0)


def test_unit_metric_hand_case():
    h = 0.05
    mesh = generate_box_mesh([0, 0], [1, 1], h)
    M = unit_metric(mesh).tensors
    for i in np.flatnonzero(mesh.star_sizes() == 4):
        if mesh.boundary_nodes()[i]:
            continue
        assert np.max(np.abs(M[i] - np.eye(2) / h ** 2)) <= 1e-12 * (1 / h ** 2)
        for j in mesh.star(i):
            X = mesh.nodes[j] - mesh.nodes[i]
            assert math.isclose(math.sqrt(X @ M[i] @ X), 1.0, rel_tol=1e-12)


def test_unit_metric_scaling():
    mesh = perturbed_mesh(3, 0.25, 3)
    scaled = SimplicialMesh(mesh.nodes * 2.5, mesh.elements)
    assert np.allclose(unit_metric(scaled).tensors, unit_metric(mesh).tensors / 2.5 ** 2, rtol=1e-12)


def test_unit_metric_mean_length():
    mesh = generate_box_mesh([0, 0], [1, 1], 0.1)
    lengths = metric_edge_lengths(mesh, unit_metric(mesh).tensors)
    assert 0.8 <= lengths.mean() <= 1.3


@pytest.mark.parametrize("seed", range(3))
def test_target_metric_matches_oracle(seed):
    mesh = perturbed_mesh(2, 0.2, seed)
    U = np.tanh((mesh.nodes[:, 1] - 0.5 + 0.1 * np.sin(5 * mesh.nodes[:, 0])) / 0.1)
    _, data = target_metric(mesh, U, 500, regularized=False)
    level, T, n1 = oracle_target(mesh, data.edge_errors, 500)
    assert math.isclose(data.error_level, level, rel_tol=1e-10)
    assert np.allclose(data.n_per_node, n1, rtol=1e-9, atol=1e-15)
    assert np.allclose(data.raw_metric, T, rtol=1e-8)


def test_halving_budget_scales_metric():
    for d, m in ((2, perturbed_mesh(2, 0.1, 4)), (3, perturbed_mesh(3, 0.25, 4))):
        U = np.sin(6 * m.nodes[:, 0]) * m.nodes[:, 1] ** 2
        a, da = target_metric(m, U, 2000, regularized=False)
        b, db = target_metric(m, U, 1000, regularized=False)
        assert math.isclose(db.error_level, da.error_level * 2 ** (2 / d), rel_tol=1e-12)
        assert np.allclose(b.tensors, a.tensors * 2 ** (-2 / d), rtol=1e-10)


def test_band_field_anisotropy():
    h = 0.05
    mesh = generate_box_mesh([-1, -1], [1, 1], h)
    y = mesh.nodes[:, 1]
    metric, _ = target_metric(mesh, np.tanh(y / h), mesh.n_nodes, h_min=1e-4, h_max=10, ratio_max=1e3)
    near = (np.abs(y) < h) & ~mesh.boundary_nodes()
    T = metric.tensors[near]
    assert np.all(T[:, 1, 1] > 2 * T[:, 0, 0])


def test_linear_field_fallback():
    mesh = perturbed_mesh(2, 0.1, 5)
    metric, data = target_metric(mesh, 2 * mesh.nodes[:, 0], 4 * mesh.n_nodes, regularized=False)
    assert data.degenerate_error_field
    assert np.allclose(metric.tensors, unit_metric(mesh).tensors * 4, rtol=1e-12)


def test_budget_too_small():
    mesh = perturbed_mesh(2, 0.25, 0)
    with pytest.raises(ValueError):
        target_metric(mesh, mesh.nodes[:, 0] ** 2, 2)


def test_rotation_equivariance():
    mesh = perturbed_mesh(2, 0.1, 6)
    U = np.tanh((mesh.nodes[:, 0] ** 2 + mesh.nodes[:, 1] - 0.8) / 0.05)
    th = 0.9
    R = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    rotated = SimplicialMesh(mesh.nodes @ R.T, mesh.elements)
    bounds = dict(h_min=1e-3, h_max=1.0, ratio_max=50.0)
    a, _ = target_metric(mesh, U, 3000, **bounds)
    b, _ = target_metric(rotated, U, 3000, **bounds)
    expected = R @ a.tensors @ R.T
    scale = np.abs(expected).max(axis=(1, 2))[:, None, None]
    assert np.max(np.abs(b.tensors - expected) / scale) < 1e-9


def test_regularize_examples():
    M = np.array([[[4.0, 1.0], [1.0, 3.0]]])
    out = regularize(M, 0.1, 10.0, 100.0)
    assert np.max(np.abs(out.tensors - M)) < 1e-12
    big = regularize(np.array([[[1e12, 0.0], [0.0, 1.0]]]), 1e-3, 10.0, 1e6)
    assert np.allclose(np.linalg.eigvalsh(big.tensors[0]), [1.0, 1e6])
    capped = regularize(np.array([[[1e4, 0.0], [0.0, 1.0]]]), 1e-3, 10.0, 10.0)
    assert np.allclose(np.linalg.eigvalsh(capped.tensors[0]), [100.0, 1e4])
    with pytest.raises(ValueError):
        regularize(np.array([[[1.0, 2.0], [0.0, 1.0]]]), 0.1, 1.0)


@pytest.mark.parametrize("dim", [2, 3])
def test_regularize_random_inputs(dim):
    rng = np.random.default_rng(dim)
    A = rng.normal(size=(10 ** 4, dim, dim)) * 10.0 ** rng.uniform(-6, 6, (10 ** 4, 1, 1))
    S = A + np.swapaxes(A, 1, 2)
    out = regularize(S, 1e-3, 1e2, 30.0)
    assert out.check()
    assert np.all(out.tensors == np.swapaxes(out.tensors, 1, 2))


def test_intersection():
    a = np.array([[[1.0, 0.0], [0.0, 4.0]]])
    b = np.array([[[4.0, 0.0], [0.0, 1.0]]])
    assert np.allclose(intersect_metrics(a, b).tensors, np.diag([4.0, 4.0]), atol=1e-12)
    assert np.allclose(intersect_metrics(a, a).tensors, a, rtol=1e-9)
    with pytest.raises(ValueError):
        intersect_metrics(a, np.zeros((2, 2, 2)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_intersection_unit_ball_containment(seed):
    rng = np.random.default_rng(seed)
    A, B = (rng.normal(size=(2, 2)) for _ in range(2))
    Ma = A @ A.T + 0.1 * np.eye(2)
    Mb = B @ B.T + 0.1 * np.eye(2)
    M = intersect_metrics(Ma[None], Mb[None]).tensors[0]
    assert np.allclose(intersect_metrics(M[None], M[None]).tensors[0], M, rtol=1e-9, atol=1e-12)
    for t in np.linspace(0, 2 * np.pi, 100, endpoint=False):
        u = np.array([math.cos(t), math.sin(t)])
        v = u / math.sqrt(u @ M @ u)  # on the boundary of the intersected ball
        assert v @ Ma @ v <= 1 + 1e-9 and v @ Mb @ v <= 1 + 1e-9


def test_metric_field_check_detects_violations():
    with pytest.raises(ValueError):
        MetricField(np.array([[[-1.0, 0.0], [0.0, 1.0]]])).check()
    with pytest.raises(ValueError):
        MetricField(np.array([[[1e8, 0.0], [0.0, 1.0]]]), h_min=1e-3).check()
