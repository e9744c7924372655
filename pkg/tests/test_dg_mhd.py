import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dgmhd.dg.forms import (FieldTraces, FormContext, PhysParams, assemble_Ah, assemble_Bh,
                            assemble_Ch, assemble_Dh, assemble_Jh, assemble_Mh, assemble_Oh)
from dgmhd.dg.postprocess import Lifter, postprocess_P
from dgmhd.dg.solver import DgSystem, picard_solve
from dgmhd.fem.conforming import conforming_space, gradient_matrix
from dgmhd.fem.layout import build_dof_layout
from dgmhd.fem.projection import l2_project
from dgmhd.linalg import ConvergenceError
from dgmhd.mesh import build_structured_tet_mesh
from dgmhd.verify.diagnostics import discrete_kernel_sample, upwind_face_sum
from dgmhd.verify.errors import compute_errors
from dgmhd.verify.mms import make_default_mms, zero_mms

P = PhysParams().resolved(1)


@pytest.fixture(scope="module")
def ctx1():
    return FormContext(build_structured_tet_mesh(1), 1)


@pytest.fixture(scope="module")
def ctx2():
    return FormContext(build_structured_tet_mesh(2), 1)


def const_field(ctx, c):
    return l2_project(ctx.disc, lambda x: np.tile(c, (len(x), 1)), ctx.k, ncomp=3)


def interior_vector_hat(ctx, c):
    """Continuous piecewise-linear vector field vanishing on the boundary."""
    S = conforming_space(ctx.disc, 1)
    s = np.zeros(S.dim)
    s[S.interior] = 1.0
    scal = (S.extension @ s).reshape(ctx.mesh.n_elements, 1, -1)
    return (np.asarray(c)[None, :, None] * scal).ravel(), S, s


def test_params_validation():
    with pytest.raises(ValueError, match="nu"):
        PhysParams(nu=0.0)
    with pytest.raises(ValueError, match="bc_type"):
        PhysParams(bc_type=3)
    assert PhysParams().resolved(2).a0 == 90.0


def test_Ah_symmetric_and_constant_field(ctx1):
    A = assemble_Ah(ctx1, P)
    assert abs(A - A.T).max() <= 1e-12 * abs(A).max()
    c = np.array([0.3, -1.0, 2.0])
    u = const_field(ctx1, c)
    assert u @ (A @ u) == pytest.approx(3 * np.sqrt(2) * P.nu * P.a0 * (c @ c), rel=1e-12)
    assert np.all(A @ np.zeros(A.shape[0]) == 0)


def test_Ah_continuous_field_is_gradient_norm(ctx2):
    A = assemble_Ah(ctx2, P)
    u, _, _ = interior_vector_hat(ctx2, [1.0, 2.0, -1.0])
    G = np.einsum("eqicd,ei->eqcd", ctx2.G, u.reshape(ctx2.mesh.n_elements, -1))
    grad2 = ctx2.disc.integrate((G ** 2).sum((-1, -2)))
    assert u @ (A @ u) == pytest.approx(P.nu * grad2, rel=1e-11)


def test_Oh_zero_beta(ctx1):
    assert abs(assemble_Oh(ctx1, FieldTraces.zeros(ctx1))).max() == 0


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_Oh_nonnegative_and_face_identity(seed):
    ctx = FormContext(build_structured_tet_mesh(1), 1)
    rng = np.random.default_rng(seed)
    B = assemble_Bh(ctx)
    mean_q = np.einsum("eq,eqb->eb", ctx.disc.wq, ctx.tq.vals).ravel()
    beta = Lifter(ctx).lift(discrete_kernel_sample(B, rng, mean_q)).traces
    O = assemble_Oh(ctx, beta)
    v = rng.standard_normal(O.shape[0])
    q = v @ (O @ v)
    scale = np.abs(beta.vol).max() * (v @ v)
    assert q >= -1e-12 * scale
    assert q == pytest.approx(upwind_face_sum(ctx, beta, v), rel=1e-11, abs=1e-14 * scale)


def test_Oh_rejects_nonconforming_beta(ctx1):
    rng = np.random.default_rng(0)
    beta = FieldTraces.from_coeffs(ctx1, rng.standard_normal(72))
    with pytest.raises(ValueError, match="H\\(div\\)"):
        assemble_Oh(ctx1, beta)


def test_Bh_linear_field_on_one_element(ctx1):
    B = assemble_Bh(ctx1)
    disc, mesh = ctx1.disc, ctx1.mesh
    u = l2_project(disc, lambda x: np.stack([x[:, 0], 0 * x[:, 0], 0 * x[:, 0]], 1), 1, ncomp=3)
    K = 2
    q = np.zeros(B.shape[0])
    q[K] = 1.0 / ctx1.tq.vals[K, 0, 0]       # q = 1 on K, 0 elsewhere
    oracle = -mesh.volumes[K]
    for lf, f in enumerate(mesh.elem_faces[K]):
        if mesh.boundary_flags[f]:
            x = disc.fx[f]
            n = disc.elem_face_normals[K, lf]
            oracle += np.sum(disc.fw[f] * x[:, 0] * n[0])
    assert q @ (B @ u) == pytest.approx(oracle, abs=1e-13)


def test_Bh_vanishes_on_lifted_fields(ctx2):
    B = assemble_Bh(ctx2)
    rng = np.random.default_rng(4)
    mean_q = np.einsum("eq,eqb->eb", ctx2.disc.wq, ctx2.tq.vals).ravel()
    lifted = postprocess_P(ctx2, discrete_kernel_sample(B, rng, mean_q))
    assert np.abs(B @ lifted.pk_block.ravel()).max() < 1e-12


def test_Mh_symmetric_and_constant_field(ctx1):
    M = assemble_Mh(ctx1, P, 1)
    assert abs(M - M.T).max() <= 1e-12 * abs(M).max()
    c = np.array([1.0, -0.5, 0.25])
    b = const_field(ctx1, c)
    mesh = ctx1.mesh
    bd = mesh.boundary_faces
    oracle = P.kappa * P.nu_m * P.m0 * sum(
        np.sum(np.cross(c, mesh.normals[f]) ** 2) * mesh.face_areas[f] / mesh.h_F[f] for f in bd)
    assert b @ (M @ b) == pytest.approx(oracle, rel=1e-12)
    M2 = assemble_Mh(ctx1, P, 2)
    assert abs(b @ (M2 @ b)) < 1e-12


@pytest.mark.parametrize("bc", [1, 2])
def test_Mh_kernel_contains_conforming_gradients(ctx2, bc):
    M = assemble_Mh(ctx2, P, bc)
    S = conforming_space(ctx2.disc, 2)
    rng = np.random.default_rng(bc)
    phi = rng.standard_normal(S.dim)
    if bc == 1:
        phi[S.boundary] = 0.0
    b = gradient_matrix(ctx2.disc, S) @ phi
    assert abs(b @ (M @ b)) <= 1e-11 * abs(M).max() * (b @ b)


def test_Dh_and_Jh_on_conforming_functions(ctx2):
    D = assemble_Dh(ctx2, 1)
    J = assemble_Jh(ctx2, P, 1)
    S = conforming_space(ctx2.disc, 2)
    G = gradient_matrix(ctx2.disc, S)
    rng = np.random.default_rng(0)
    phi = rng.standard_normal(S.dim)
    phi[S.boundary] = 0.0
    s = S.extension @ phi
    b = rng.standard_normal(D.shape[1])
    assert s @ (D @ b) == pytest.approx(b @ (G @ phi), rel=1e-12)
    grad = G @ phi
    assert s @ (D @ grad) == pytest.approx(grad @ grad, rel=1e-11)
    assert abs(s @ (J @ s)) < 1e-12 * (s @ s)
    assert abs(J - J.T).max() < 1e-12 * abs(J).max()
    t = rng.standard_normal(J.shape[0])
    assert t @ (J @ t) > 0


def test_Ch_transpose_pairing(ctx2):
    rng = np.random.default_rng(1)
    d = FieldTraces.from_coeffs(ctx2, rng.standard_normal(3 * ctx2.nb * ctx2.mesh.n_elements))
    X_ub, X_bu = assemble_Ch(ctx2, P, d)
    # assembled independently, so equal up to summation-order roundoff
    assert abs(X_ub + X_bu.T).max() <= 1e-14 * abs(X_ub).max() * X_ub.shape[0] ** 0.5
    Z_ub, Z_bu = assemble_Ch(ctx2, P, FieldTraces.zeros(ctx2))
    assert abs(Z_ub).max() == 0 and abs(Z_bu).max() == 0


def test_Ch_single_element_oracle(ctx2):
    mesh, disc = ctx2.mesh, ctx2.disc
    K = int(np.flatnonzero(np.all(~mesh.boundary_flags[mesh.elem_faces], axis=1))[0])
    e1, e2 = np.array([1.0, 0, 0]), np.array([0, 1.0, 0])
    v = const_field(ctx2, e1)
    d = FieldTraces.from_coeffs(ctx2, const_field(ctx2, e2))
    # b = (-y/2, x/2, 0) on K only, so curl b = e3 there
    full = l2_project(disc, lambda x: np.stack([-x[:, 1] / 2, x[:, 0] / 2, 0 * x[:, 0]], 1), 1, ncomp=3)
    b = np.zeros_like(full).reshape(mesh.n_elements, -1)
    b[K] = full.reshape(mesh.n_elements, -1)[K]
    b = b.ravel()
    X_ub, _ = assemble_Ch(ctx2, P, d)
    oracle = P.kappa * mesh.volumes[K]
    e3 = np.array([0, 0, 1.0])
    for lf, f in enumerate(mesh.elem_faces[K]):
        x = disc.fx[f]
        n = disc.elem_face_normals[K, lf]
        bx = np.stack([-x[:, 1] / 2, x[:, 0] / 2, 0 * x[:, 0]], 1)
        oracle -= P.kappa * np.sum(disc.fw[f] * (np.cross(n, bx) @ e3))
    assert v @ (X_ub @ b) == pytest.approx(oracle, rel=1e-12)


def test_postprocess_reproduces_constants(ctx2):
    c = np.array([0.5, -1.0, 2.0])
    lifted = postprocess_P(ctx2, const_field(ctx2, c), boundary="inner")
    assert np.abs(lifted.traces.vol - c).max() < 1e-12


@pytest.mark.parametrize("k", [1, 2])
def test_layout_matches_system(k):
    mesh = build_structured_tet_mesh(1)
    sysm = DgSystem(mesh, k, PhysParams())
    lay = build_dof_layout(mesh, k)
    assert sysm.size == lay.dim("V") + lay.dim("Q") + lay.dim("C") + lay.dim("S") + 1


@pytest.mark.parametrize("bc", [1, 2])
def test_zero_data_gives_zero_solution(bc):
    sysm = DgSystem(build_structured_tet_mesh(1), 1, PhysParams(bc_type=bc))
    z = sysm.zero_field()
    sol = sysm.solve_linearized(z, z, None, None)
    assert np.abs(sysm.join(sol)).max() == 0.0
    zm = zero_mms(bc)
    sol, state = sysm.picard(zm.f, zm.g)
    assert state.iterations == 1 and state.converged
    assert np.abs(sysm.join(sol)).max() == 0.0


@pytest.mark.parametrize("bc", [1, 2])
def test_linearized_solve_invariants(bc):
    mms = make_default_mms(bc)
    sysm = DgSystem(build_structured_tet_mesh(2), 1, PhysParams(bc_type=bc))
    rng = np.random.default_rng(bc)
    mean_q = sysm.mean_q
    beta = sysm.lifter.lift(discrete_kernel_sample(sysm.B, rng, mean_q)).traces
    d = sysm.field(rng.standard_normal(sysm.nC))
    sol = sysm.solve_linearized(beta, d, mms.f, mms.g)
    assert sol.residual <= 1e-9
    # independent re-assembly of the block rows
    O = assemble_Oh(sysm.ctx, beta)
    X_ub, X_bu = assemble_Ch(sysm.ctx, sysm.params, d)
    F = sysm.rhs(mms.f, mms.g)
    o = sysm.offsets
    r1 = (sysm.A + O) @ sol.u + sysm.B.T @ sol.p + X_ub @ sol.b - F[o["u"]:o["p"]]
    assert np.linalg.norm(r1) <= 1e-9 * np.linalg.norm(F)
    assert np.abs(sysm.B @ sol.u).max() <= 1e-9 * np.abs(sol.u).max()
    assert np.abs(sysm.D @ sol.b - sysm.J @ sol.r).max() <= 1e-9 * np.abs(sol.b).max()
    assert abs(sysm.mean_q @ sol.p) <= 1e-10
    if bc == 2:
        assert abs(sysm.mean_s @ sol.r) <= 1e-10
    lhs, rhs = sysm.energy_balance(sol, beta, mms.f, mms.g)
    assert lhs == pytest.approx(rhs, rel=1e-8)
    assert lhs > 0


def test_picard_contracts_on_small_data():
    mms = make_default_mms(1, scale=0.01)
    sysm = DgSystem(build_structured_tet_mesh(2), 1, PhysParams())
    sol, state = sysm.picard(mms.f, mms.g)
    assert state.converged and all(r < 1 for r in state.ratios)
    assert set(state.smallness) == {"f_over_nu2", "f_over_nu_num", "g_over_nu32_k12_num12",
                                    "g_over_nu12_k12_num32"}
    assert np.abs(sysm.B @ sol.u).max() <= 1e-9 * np.abs(sol.u).max()


def test_picard_failure_carries_history():
    mms = make_default_mms(1)
    sysm = DgSystem(build_structured_tet_mesh(1), 1, PhysParams())
    with pytest.raises(ConvergenceError) as info:
        sysm.picard(mms.f, mms.g, tol=1e-14, max_iter=2)
    assert len(info.value.history) == 2


def test_module_level_solvers_agree_with_system():
    mesh = build_structured_tet_mesh(1)
    mms = make_default_mms(2)
    layout = build_dof_layout(mesh, 1, "dg", 2)
    sol, state = picard_solve(mesh, layout, PhysParams(bc_type=2), mms.f, mms.g)
    ref, _ = DgSystem(mesh, 1, PhysParams(bc_type=2)).picard(mms.f, mms.g)
    assert np.allclose(sol.u, ref.u, atol=1e-15)


def test_doubling_a0_changes_solution_less_than_error():
    mesh = build_structured_tet_mesh(2)
    mms = make_default_mms(1)
    s1 = DgSystem(mesh, 1, PhysParams())
    u1, _ = s1.picard(mms.f, mms.g)
    s2 = DgSystem(mesh, 1, PhysParams(a0=80.0, m0=80.0))
    u2, _ = s2.picard(mms.f, mms.g)
    err = compute_errors(u1, mms, s1)
    assert s1.norm_V(u1.u - u2.u) < err.err_u_V
    assert s1.norm_C(u1.b - u2.b) < err.err_b_C
