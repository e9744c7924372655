import math

import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st

from dgmhd.dg.forms import FormContext, PhysParams, gram_curl
from dgmhd.dg.solver import DgSystem
from dgmhd.fem.conforming import conforming_space, gradient_matrix
from dgmhd.fem.projection import l2_project
from dgmhd.fem.quadrature import make_quadrature
from dgmhd.mesh import build_structured_tet_mesh
from dgmhd.verify import dual
from dgmhd.verify.diagnostics import project_C
from dgmhd.verify.errors import compute_errors
from dgmhd.verify.mms import MmsCase, make_default_mms, zero_mms
from dgmhd.verify import study
from dgmhd.verify.study import CSV_HEADER, StudyError, convergence_study, observed_rate

X, Y, Z = sympy.symbols("x y z")


def _symbolic(case):
    """Exact fields and forcings of an MmsCase rebuilt independently in sympy."""
    s = case.scale
    psi = (X * (1 - X) * Y * (1 - Y) * Z * (1 - Z)) ** 2
    pot = sympy.Matrix([psi, psi, psi])
    if case.bc_type == 1:
        w = sympy.sin(sympy.pi * X) ** 2 * sympy.sin(sympy.pi * Y) ** 2 * sympy.sin(sympy.pi * Z)
        r = sympy.sin(sympy.pi * X) * sympy.sin(sympy.pi * Y) * sympy.sin(sympy.pi * Z)
    else:
        w = sympy.sin(sympy.pi * X) * sympy.sin(sympy.pi * Y) * sympy.cos(sympy.pi * Z)
        r = sympy.cos(sympy.pi * X) * sympy.cos(sympy.pi * Y) * sympy.cos(sympy.pi * Z)
    v = [X, Y, Z]

    def curl(F):
        return sympy.Matrix([sympy.diff(F[2], Y) - sympy.diff(F[1], Z),
                             sympy.diff(F[0], Z) - sympy.diff(F[2], X),
                             sympy.diff(F[1], X) - sympy.diff(F[0], Y)])

    def grad(f):
        return sympy.Matrix([sympy.diff(f, c) for c in v])

    u = s * curl(pot)
    b = s * curl(sympy.Matrix([0, 0, w]))
    p = s * case.pressure_amplitude * sympy.cos(sympy.pi * X) * sympy.cos(sympy.pi * Y)
    r = s * r
    lap = sympy.Matrix([sum(sympy.diff(u[i], c, 2) for c in v) for i in range(3)])
    conv = sympy.Matrix([sum(u[j] * sympy.diff(u[i], v[j]) for j in range(3)) for i in range(3)])
    f = -case.nu * lap + conv + grad(p) - case.kappa * curl(b).cross(b)
    g = case.kappa * case.nu_m * curl(curl(b)) + grad(r) - case.kappa * curl(u.cross(b))
    return {"u": u, "b": b, "p": p, "r": r, "f": f, "g": g}


def _eval(expr, pts):
    fn = sympy.lambdify((X, Y, Z), expr, "numpy")
    return np.array([np.array(fn(*q), dtype=float).ravel() for q in pts])


@pytest.mark.parametrize("bc_type", [1, 2])
def test_forcings_match_symbolic_oracle(bc_type):
    case = MmsCase(bc_type, pressure_amplitude=3.0, nu=0.7, nu_m=1.3, kappa=0.9)
    sym = _symbolic(case)
    pts = np.random.default_rng(bc_type).random((5, 3))
    for name in ("u", "b", "f", "g"):
        exact = _eval(sym[name], pts)
        got = getattr(case, name)(pts)
        assert np.abs(got - exact).max() <= 1e-12 * max(np.abs(exact).max(), 1.0), name
    assert np.allclose(case.p(pts), _eval(sym["p"], pts)[:, 0], atol=1e-14)
    assert np.allclose(case.r(pts), _eval(sym["r"], pts)[:, 0], atol=1e-14)


def test_forcing_at_center_against_finite_differences():
    case = make_default_mms(1)
    x0 = np.array([[0.5, 0.5, 0.5]])
    h = 1e-3
    E = np.eye(3)

    def lap(fun):
        return sum(fun(x0 + h * E[i]) - 2 * fun(x0) + fun(x0 - h * E[i]) for i in range(3)) / h ** 2

    def grad(fun):
        return np.stack([(fun(x0 + h * E[i]) - fun(x0 - h * E[i])) / (2 * h) for i in range(3)], -1)

    u, b = case.u(x0), case.b(x0)
    gu = grad(case.u)
    gb = grad(case.b)
    curl_b = np.array([gb[0, 2, 1] - gb[0, 1, 2], gb[0, 0, 2] - gb[0, 2, 0], gb[0, 1, 0] - gb[0, 0, 1]])
    gp = grad(lambda x: case.p(x)[:, None])[:, 0]
    fd = -lap(case.u) + gu[0] @ u[0] + gp - np.cross(curl_b, b[0])
    assert np.abs(case.f(x0) - fd).max() <= 1e-6


@pytest.mark.parametrize("bc_type", [1, 2])
def test_exact_fields_are_solenoidal(bc_type):
    case = make_default_mms(bc_type)
    pts = np.random.default_rng(0).random((100, 3))
    assert np.abs(case.div_u(pts)).max() < 1e-14
    assert np.abs(case.div_b(pts)).max() < 1e-14


@pytest.mark.parametrize("bc_type", [1, 2])
def test_boundary_conditions(bc_type):
    case = make_default_mms(bc_type)
    rng = np.random.default_rng(1)
    for axis in range(3):
        for side in (0.0, 1.0):
            pts = rng.random((30, 3))
            pts[:, axis] = side
            n = np.zeros(3)
            n[axis] = 1.0
            assert np.abs(case.u(pts)).max() < 1e-15
            if bc_type == 1:
                assert np.abs(np.cross(case.b(pts), n)).max() < 1e-15
                assert np.abs(case.r(pts)).max() < 1e-15
            else:
                assert np.abs(case.b(pts) @ n).max() < 1e-15
                assert np.abs(np.cross(case.curl_b(pts), n)).max() < 1e-14
                assert np.abs(case.grad_r(pts) @ n).max() < 1e-14


@pytest.mark.parametrize("bc_type", [1, 2])
def test_mean_zero_scalars(bc_type):
    case = make_default_mms(bc_type)
    mesh = build_structured_tet_mesh(2)
    q = make_quadrature("tet", 16)
    J = mesh.jacobians()
    x = (np.einsum("eij,qj->eqi", J, q.points) + mesh.vertices[mesh.tets[:, 0]][:, None]).reshape(-1, 3)
    w = (np.abs(np.linalg.det(J))[:, None] * q.weights).ravel()
    assert abs(w @ case.p(x)) < 1e-14
    if bc_type == 2:
        assert abs(w @ case.r(x)) < 1e-14


def test_zero_case_is_zero():
    z = zero_mms(2)
    pts = np.random.default_rng(0).random((10, 3))
    for name in ("u", "b", "p", "r", "f", "g"):
        assert np.abs(getattr(z, name)(pts)).max() == 0.0


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_dual_derivatives_against_finite_differences(c):
    x = np.array([c])

    def fun(a, b, z):
        return dual.sin(a * b) * dual.cos(z) + a ** 3 * z

    v, g, H, T = dual.derivatives(fun, x, 3)
    h = 1e-5
    E = np.eye(3)
    for i in range(3):
        fd = (dual.derivatives(fun, x + h * E[i], 0)[0] - dual.derivatives(fun, x - h * E[i], 0)[0]) / (2 * h)
        assert g[0, i] == pytest.approx(fd[0], abs=1e-8)
        fdg = (dual.derivatives(fun, x + h * E[i], 1)[1] - dual.derivatives(fun, x - h * E[i], 1)[1]) / (2 * h)
        assert np.allclose(H[0, :, i], fdg[0], atol=1e-7)
        fdh = (dual.derivatives(fun, x + h * E[i], 2)[2] - dual.derivatives(fun, x - h * E[i], 2)[2]) / (2 * h)
        assert np.allclose(T[0, :, :, i], fdh[0], atol=1e-6)


def _norm_oracle(case, n, degree=24):
    """||grad u||, ||b||^2 + ||curl b||^2, ||p||, ||grad r|| by independent quadrature."""
    mesh = build_structured_tet_mesh(n)
    q = make_quadrature("tet", degree)
    J = mesh.jacobians()
    x = (np.einsum("eij,qj->eqi", J, q.points) + mesh.vertices[mesh.tets[:, 0]][:, None]).reshape(-1, 3)
    w = (np.abs(np.linalg.det(J))[:, None] * q.weights).ravel()
    return {
        "u_V": math.sqrt(w @ (case.grad_u(x) ** 2).sum(axis=(1, 2))),
        "b_C": math.sqrt(w @ ((case.b(x) ** 2).sum(1) + (case.curl_b(x) ** 2).sum(1))),
        "p": math.sqrt(w @ case.p(x) ** 2),
        "r_S": math.sqrt(w @ (case.grad_r(x) ** 2).sum(1)),
    }


def test_errors_of_zero_solution_equal_exact_norms():
    # exact fields vanish on the boundary in every trace seen by the bc 1 norms
    case = make_default_mms(1)
    S = DgSystem(build_structured_tet_mesh(2), 1, PhysParams(), quad_degree=20)
    rep = compute_errors(S.split(np.zeros(S.size)), case, S)
    ref = _norm_oracle(case, 2)
    assert rep.err_u_V == pytest.approx(ref["u_V"], rel=1e-8)
    assert rep.err_b_C == pytest.approx(ref["b_C"], rel=1e-8)
    assert rep.err_p_L2 == pytest.approx(ref["p"], rel=1e-8)
    assert rep.err_r_S == pytest.approx(ref["r_S"], rel=1e-8)


def _projected(S, case):
    d = S.ctx.disc
    sol = S.split(np.zeros(S.size))
    sol.u = l2_project(d, case.u, S.k, ncomp=3).ravel()
    sol.b = l2_project(d, case.b, S.k, ncomp=3).ravel()
    sol.p = l2_project(d, case.p, S.k - 1).ravel()
    sol.r = l2_project(d, case.r, S.k + 1).ravel()
    return sol


def test_projection_errors_converge():
    case = make_default_mms(1)
    reps = []
    for n in (2, 4):
        S = DgSystem(build_structured_tet_mesh(n), 1, PhysParams())
        reps.append(compute_errors(_projected(S, case), case, S))
    h = [r.h for r in reps]
    assert observed_rate(reps[0].err_b_L2, reps[1].err_b_L2, *h) > 1.7
    assert observed_rate(reps[0].err_p_L2, reps[1].err_p_L2, *h) > 0.9
    assert observed_rate(reps[0].err_r_S, reps[1].err_r_S, *h) > 1.7


def test_projection_is_best_l2_approximation():
    case = make_default_mms(1)
    S = DgSystem(build_structured_tet_mesh(2), 1, PhysParams())
    sol = _projected(S, case)
    best = compute_errors(sol, case, S).err_u_L2
    rng = np.random.default_rng(0)
    for _ in range(5):
        sol.u = sol.u + 1e-6 * rng.standard_normal(sol.u.size)
        assert compute_errors(sol, case, S).err_u_L2 > best


def test_interior_norms_bounded_by_full_norms():
    ctx = FormContext(build_structured_tet_mesh(2), 1)
    full, inner = gram_curl(ctx, 1), gram_curl(ctx, 2)
    rng = np.random.default_rng(0)
    for _ in range(10):
        b = rng.standard_normal(full.shape[0])
        assert b @ (inner @ b) <= b @ (full @ b) * (1 + 1e-14)


def test_bc2_report_names():
    case = make_default_mms(2)
    S = DgSystem(build_structured_tet_mesh(1), 1, PhysParams(bc_type=2))
    d = compute_errors(S.split(np.zeros(S.size)), case, S).as_dict()
    assert "err_b_CI" in d and "err_r_SI" in d and "err_b_C" not in d


@pytest.mark.parametrize("bc_type", [1, 2])
def test_project_C_orthogonal_to_conforming_gradients(bc_type):
    ctx = FormContext(build_structured_tet_mesh(2), 1)
    b0 = np.random.default_rng(3).standard_normal(3 * ctx.nb * ctx.disc.ne)
    b = project_C(ctx, b0, bc_type)
    space = conforming_space(ctx.disc, 2)
    G = gradient_matrix(ctx.disc, space)
    free = space.interior if bc_type == 1 else np.arange(space.dim)
    assert np.abs(G[:, free].T @ b).max() <= 1e-10 * np.abs(b0).max()
    with pytest.raises(ValueError):
        project_C(FormContext(build_structured_tet_mesh(1), 2), np.zeros(1))


def test_observed_rate():
    assert observed_rate(4.0, 1.0, 1.0, 0.5) == pytest.approx(2.0)
    assert math.isnan(observed_rate(1.0, 1.0, 0.5, 0.5))
    assert math.isnan(observed_rate(0.0, 1.0, 1.0, 0.5))


def test_study_requires_two_meshes():
    with pytest.raises(ValueError, match="need"):
        convergence_study("dg", 1, 1, [1], PhysParams(), make_default_mms(1))


def test_study_table_and_csv():
    table = convergence_study("hdg", 1, 1, [1, 2], PhysParams(), make_default_mms(1))
    lines = table.to_csv().splitlines()
    assert lines[0].split(",") == CSV_HEADER
    assert len(lines) == 3
    assert lines[1].split(",")[3] == "nan"
    row = table.rows[1]
    assert row["rate_u"] == pytest.approx(
        observed_rate(table.rows[0]["err_u_V"], row["err_u_V"], table.rows[0]["h"], row["h"]))
    assert table.warnings == []


def test_study_failure_keeps_partial_table():
    # data far beyond the smallness regime: the iteration stops contracting
    case = make_default_mms(1, scale=40.0)
    with pytest.raises(StudyError) as info:
        convergence_study("dg", 1, 1, [1, 2], PhysParams(), case, max_iter=60)
    assert info.value.table.rows == []
    assert "n=1" in str(info.value)


def test_study_records_non_contraction(monkeypatch):
    real = study.run_mms

    def flagged(*args, **kwargs):
        res = real(*args, **kwargs)
        res.state.contraction_warning = True
        return res

    monkeypatch.setattr(study, "run_mms", flagged)
    table = convergence_study("hdg", 1, 1, [1, 2], PhysParams(), make_default_mms(1))
    assert len(table.warnings) == 2 and "non-contraction on n=1" in table.warnings[0]
