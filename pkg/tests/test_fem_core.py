from math import factorial

import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st

from dgmhd.fem.basis import lattice_nodes, make_scalar_basis, poly_dim
from dgmhd.fem.conforming import conforming_space, gradient_matrix, stiffness
from dgmhd.fem.layout import build_dof_layout
from dgmhd.fem.projection import evaluate, l2_project
from dgmhd.fem.quadrature import make_quadrature
from dgmhd.fem.space import Discretization
from dgmhd.mesh import build_structured_tet_mesh


def _tet_monomial(a, b, c):
    return factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3)


def _tri_monomial(a, b):
    return factorial(a) * factorial(b) / factorial(a + b + 2)


def test_single_point_rules():
    q = make_quadrature("tet", 0)
    assert q.npoints == 1 and q.weights[0] == pytest.approx(1 / 6)
    q = make_quadrature("tri", 0)
    assert q.npoints == 1 and q.weights[0] == pytest.approx(1 / 2)


def test_x2y2_against_symbolic_oracle():
    x, y, z = sympy.symbols("x y z")
    exact = sympy.integrate(x ** 2 * y ** 2, (z, 0, 1 - x - y), (y, 0, 1 - x), (x, 0, 1))
    q = make_quadrature("tet", 4)
    val = np.sum(q.weights * q.points[:, 0] ** 2 * q.points[:, 1] ** 2)
    assert val == pytest.approx(float(exact), rel=1e-12)


@pytest.mark.parametrize("d", [1, 3, 5, 8, 12])
def test_tet_rule_exactness(d):
    q = make_quadrature("tet", d)
    assert np.all(q.weights > 0)
    assert q.weights.sum() == pytest.approx(1 / 6, rel=1e-13)
    for a in range(d + 1):
        for b in range(d + 1 - a):
            for c in range(d + 1 - a - b):
                val = np.sum(q.weights * q.points[:, 0] ** a * q.points[:, 1] ** b * q.points[:, 2] ** c)
                assert val == pytest.approx(_tet_monomial(a, b, c), rel=1e-12)


@pytest.mark.parametrize("d", [2, 6, 12])
def test_tri_rule_exactness(d):
    q = make_quadrature("tri", d)
    assert np.all(q.weights > 0)
    for a in range(d + 1):
        for b in range(d + 1 - a):
            val = np.sum(q.weights * q.points[:, 0] ** a * q.points[:, 1] ** b)
            assert val == pytest.approx(_tri_monomial(a, b), rel=1e-12)


def test_unsupported_quadrature():
    with pytest.raises(ValueError):
        make_quadrature("tet", 1000)
    with pytest.raises(ValueError):
        make_quadrature("hex", 2)


def test_nodal_p1_identity_at_vertices():
    b = make_scalar_basis(1, "nodal", "tet")
    assert b.dim == 4
    assert np.allclose(b.values(lattice_nodes("tet", 1)), np.eye(4), atol=1e-14)


@pytest.mark.parametrize("k", [0, 1, 2, 3, 4])
def test_basis_dimensions(k):
    assert make_scalar_basis(k, "orthonormal", "tet").dim == (k + 1) * (k + 2) * (k + 3) // 6
    assert make_scalar_basis(k, "orthonormal", "tri").dim == (k + 1) * (k + 2) // 2


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_orthonormal_gram_identity(k):
    b = make_scalar_basis(k, "orthonormal", "tet")
    q = make_quadrature("tet", 2 * k)
    V = b.values(q.points)
    assert np.abs(V.T @ (q.weights[:, None] * V) - np.eye(b.dim)).max() < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.lists(st.floats(0, 1), min_size=3, max_size=3))
def test_nodal_partition_of_unity(k, p):
    p = np.array(p)
    if p.sum() > 1:
        p = p / p.sum()
    b = make_scalar_basis(k, "nodal", "tet")
    assert b.values(p[None]).sum() == pytest.approx(1.0, abs=1e-13)


def test_unsupported_degree_rejected():
    with pytest.raises(ValueError):
        make_scalar_basis(-1)
    with pytest.raises(ValueError):
        make_scalar_basis(99)


def test_mapped_gradient_of_linear_function():
    disc = Discretization(build_structured_tet_mesh(2), 1)
    c = np.array([0.3, -1.2, 2.0])
    coeffs = l2_project(disc, lambda x: x @ c, 1)
    g = np.einsum("eqbd,eb->eqd", disc.scalar(1).grads, coeffs.reshape(disc.ne, -1))
    assert np.abs(g - c).max() < 1e-12


def test_face_restriction_consistency():
    disc = Discretization(build_structured_tet_mesh(2), 2)
    tab = disc.scalar(2)
    mesh = disc.mesh
    basis = make_scalar_basis(2, "orthonormal", "tet")
    xi = disc.frames.owner_xi
    direct = basis.values(xi.reshape(-1, 3)).reshape(xi.shape[:2] + (-1,))
    direct *= disc.scale[mesh.face_owner][:, None, None]
    assert np.abs(direct - tab.face_vals[0]).max() < 1e-13


def test_dg_layout_counts():
    lay = build_dof_layout(build_structured_tet_mesh(1), 1, "dg", 1)
    assert lay.dim("V") == 72
    assert lay.dim("Q") == 6
    assert lay.dim("S") == 60
    assert lay.mean_constraints == ("Q",)
    assert build_dof_layout(build_structured_tet_mesh(1), 1, "dg", 2).mean_constraints == ("Q", "S")


def test_hdg_layout_counts():
    lay = build_dof_layout(build_structured_tet_mesh(1), 1, "hdg", 1)
    assert lay.dim("Lambda") == 72
    assert lay.dim("M") == 6 * 3 * 3
    assert lay.dim("MT") == 6 * 2 * 3
    assert lay.dim("N") == 6 * poly_dim(2, 2)
    assert lay.dim("Qbar") == 6
    assert lay.dim("G") == 6 * 9 * 4


def test_layout_rejects_bad_input():
    m = build_structured_tet_mesh(1)
    with pytest.raises(ValueError):
        build_dof_layout(m, 0)
    with pytest.raises(ValueError):
        build_dof_layout(m, 1, "hdg", 2)


def test_projection_reproduces_polynomials_and_is_idempotent():
    disc = Discretization(build_structured_tet_mesh(2), 2)

    def poly(x):
        return 1 + x[:, 0] * x[:, 1] - 3 * x[:, 2] ** 2

    c = l2_project(disc, poly, 2)
    assert np.abs(evaluate(disc, c, 2)[..., 0] - poly(disc.xq.reshape(-1, 3)).reshape(disc.ne, -1)).max() < 1e-12
    c2 = l2_project(disc, np.sin, 2, ncomp=3)
    assert np.abs(l2_project(disc, (c2, 2), 2, ncomp=3) - c2).max() < 1e-13


def test_p0_projection_is_element_average():
    mesh = build_structured_tet_mesh(1)
    disc = Discretization(mesh, 1, quad_degree=20)
    c = l2_project(disc, lambda x: np.sin(np.pi * x[:, 0]), 0)
    avg = c * disc.scalar(0).vals[:, 0, 0]
    hi = make_quadrature("tet", 20)
    J = mesh.jacobians()
    x = np.einsum("eij,qj->eqi", J, hi.points) + mesh.vertices[mesh.tets[:, 0]][:, None]
    oracle = (hi.weights * np.sin(np.pi * x[..., 0])).sum(axis=1) * 6
    assert np.abs(avg - oracle).max() < 1e-12


@pytest.mark.parametrize("n,m", [(1, 1), (2, 2), (2, 3)])
def test_conforming_space(n, m):
    disc = Discretization(build_structured_tet_mesh(n), 1)
    S = conforming_space(disc, m)
    assert S.dim == (n * m + 1) ** 3
    assert S.boundary.sum() == (n * m + 1) ** 3 - max(n * m - 1, 0) ** 3
    K = stiffness(disc, S)
    x = S.nodes[:, 0]
    assert x @ (K @ x) == pytest.approx(1.0, rel=1e-12)
    assert np.abs(K @ np.ones(S.dim)).max() < 1e-12
    # gradient of x^2 has squared L2 norm 4/3 on the unit cube
    if m >= 2:
        g = gradient_matrix(disc, S) @ (x ** 2)
        assert g @ g == pytest.approx(4 / 3, rel=1e-12)
