"""Oracle tests for bases and quadrature.

Quadrature exactness is checked against the closed-form monomial
integrals on the unit triangle, int x^a y^b = a! b! / (a+b+2)!.
"""

import math

import numpy as np
import pytest

from stokesrom import shape


def tri_monomial_exact(a, b):
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


@pytest.mark.parametrize("order", [1, 2, 3, 4, 6, 8, 10, 12, 14])
def test_triangle_rule_monomial_exactness(order):
    pts, w = shape.quad_rule("triangle", order)
    assert np.all(w > 0)
    for a in range(order + 1):
        for b in range(order + 1 - a):
            val = np.sum(w * pts[:, 0] ** a * pts[:, 1] ** b)
            assert val == pytest.approx(tri_monomial_exact(a, b), abs=1e-14, rel=1e-12)


def test_triangle_rule_area():
    pts, w = shape.quad_rule("triangle", 1)
    assert np.sum(w) == pytest.approx(0.5, abs=1e-15)


def test_segment_rule_odd_symmetry():
    x, w = shape.quad_rule("segment", 3)
    assert np.sum(w * x**3) == pytest.approx(0.0, abs=1e-15)
    assert np.sum(w * x**2) == pytest.approx(2.0 / 3.0, abs=1e-14)


@pytest.mark.parametrize("k", [1, 2, 3, 4, 6, 8])
def test_basis_partition_of_unity(k):
    rng = np.random.default_rng(1234)
    r = rng.random((40, 2))
    pts = np.where(r.sum(axis=1, keepdims=True) > 1, 1 - r[:, ::-1], r)
    tab = shape.simplex_basis(k, pts)
    assert np.allclose(tab.values.sum(axis=1), 1.0, atol=1e-10)
    assert np.allclose(tab.gradients.sum(axis=1), 0.0, atol=1e-8)


def test_basis_barycenter_k1():
    tab = shape.simplex_basis(1, [[1 / 3, 1 / 3]])
    assert np.allclose(tab.values, 1 / 3, atol=1e-14)


@pytest.mark.parametrize("k", [1, 2, 4, 5])
def test_basis_kronecker_delta(k):
    nodes = shape.lattice_nodes(k)
    tab = shape.simplex_basis(k, nodes)
    assert np.allclose(tab.values, np.eye(len(nodes)), atol=1e-10)


def test_basis_monomial_reproduction():
    # x^2 y is degree 3; nodal interpolation must reproduce it for k >= 3.
    for k in (3, 4):
        nodes = shape.lattice_nodes(k)
        coeffs = nodes[:, 0] ** 2 * nodes[:, 1]
        pts = np.array([[0.21, 0.33], [0.05, 0.6], [0.4, 0.17]])
        tab = shape.simplex_basis(k, pts)
        assert np.allclose(tab.values @ coeffs, pts[:, 0] ** 2 * pts[:, 1], atol=1e-12)


def test_basis_gradient_matches_fd():
    rng = np.random.default_rng(7)
    pts = rng.random((10, 2)) * 0.4 + 0.1
    h = 1e-6
    for k in (2, 4, 6):
        tab = shape.simplex_basis(k, pts)
        for d in range(2):
            dp = pts.copy()
            dm = pts.copy()
            dp[:, d] += h
            dm[:, d] -= h
            fd = (shape.simplex_basis(k, dp).values - shape.simplex_basis(k, dm).values) / (
                2 * h
            )
            assert np.max(np.abs(tab.gradients[:, :, d] - fd)) < 1e-7


def test_basis_degree_out_of_range():
    with pytest.raises(ValueError):
        shape.simplex_basis(0, [[0.2, 0.2]])
    with pytest.raises(ValueError):
        shape.simplex_basis(9, [[0.2, 0.2]])


def test_face_trace_indices_match_1d_lattice():
    k = 3
    nodes = shape.lattice_nodes(k)
    traces = shape.face_trace_indices(k)
    # face 0 runs along y=0 from (0,0) to (1,0)
    assert np.allclose(nodes[traces[0]][:, 0], np.linspace(0, 1, k + 1))
    assert np.allclose(nodes[traces[0]][:, 1], 0.0)
    # face 1 runs from (1,0) to (0,1)
    assert np.allclose(nodes[traces[1]][:, 1], np.linspace(0, 1, k + 1))
    # face 2 runs from (0,1) to (0,0)
    assert np.allclose(nodes[traces[2]][:, 1], np.linspace(1, 0, k + 1))


def test_interval_mesh_nodes_and_dofs():
    pm = shape.interval_mesh((1, 3), 2, 1)
    assert np.allclose(pm.nodes, [1, 2, 3])
    pm = shape.interval_mesh((1, 3), 1000, 4)
    assert pm.ndof == 4001


def test_interval_mesh_mass_row_sums():
    pm = shape.interval_mesh((1, 3), 7, 3)
    assert pm.matrix().sum() == pytest.approx(2.0, abs=1e-12)


def test_interval_mesh_weighted_matrix_oracle():
    pm = shape.interval_mesh((1, 3), 5, 2)
    rng = np.random.default_rng(3)
    psi = rng.standard_normal(pm.ndof)
    phi = rng.standard_normal(pm.ndof)
    a = psi @ pm.matrix(lambda m: m**2 - 0.5 * m) @ phi
    b = pm.coupling(lambda m: m**2 - 0.5 * m, psi, phi)
    assert a == pytest.approx(b, rel=1e-12)
    # dense quadrature oracle
    x, w = pm.quad_points_weights()
    psi_v = pm.eval_at(psi, x)
    phi_v = pm.eval_at(phi, x)
    c = np.sum(w * (x**2 - 0.5 * x) * psi_v * phi_v)
    assert a == pytest.approx(c, rel=1e-11)


def test_interval_mesh_degenerate_point():
    pm = shape.interval_mesh((2.0, 2.0), 1, 3)
    assert pm.degenerate and pm.ndof == 1
    assert pm.matrix(lambda m: m + 1)[0, 0] == pytest.approx(3.0)
    assert pm.coupling(lambda m: m, [4.0], [0.5]) == pytest.approx(4.0)
    assert pm.eval_at([7.0], [2.0])[0] == 7.0


def test_interval_mesh_empty_interval():
    with pytest.raises(ValueError):
        shape.interval_mesh((3, 1), 2, 1)


def test_interval_eval_at_interpolates():
    pm = shape.interval_mesh((0, 1), 4, 3)
    nodal = pm.nodes**3 - pm.nodes
    mu = np.array([0.0, 0.17, 0.5, 0.99, 1.0])
    assert np.allclose(pm.eval_at(nodal, mu), mu**3 - mu, atol=1e-12)
