"""Numerical diagnostics of the structural properties of both schemes.

Each driver returns a plain dict with the measured quantities, the frozen
threshold it is compared against and a ``passed`` flag.
"""
import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from ..dg.forms import (FieldTraces, FormContext, PhysParams, assemble_Ah, assemble_Bh,
                        assemble_Mh, assemble_Oh, gram_curl, gram_V)
from ..dg.postprocess import Lifter
from ..fem.conforming import conforming_space, gradient_matrix, stiffness
from ..mesh import build_structured_tet_mesh
from .mms import make_default_mms
from .study import run_mms

COERCIVITY_MIN = 0.05
EMBEDDING_GROWTH = 2.0
LIFT_L2_MAX = 10.0
UPWIND_TOL = 1e-12
DIV_TOL = 1e-11
TOP_TOL = 1e-11
PRESSURE_ROBUST_TOL = 0.01
PRESSURE_CHANGE_MIN = 10.0
CROSS_CHECK_FACTOR = 3.0
STABILITY_GROWTH = 1.5
ENERGY_TOL = 1e-8


def _mesh(n):
    return build_structured_tet_mesh(n)


# discrete gradient correction ------------------------------------------------

def gradient_correction(ctx, b0, bc_type=1):
    """Return (b0 - grad phi, phi) with (grad phi, grad s) = (b0, grad s).

    The test space is the continuous P_{k+1} space, restricted to zero
    boundary values for bc_type 1 and pinned at one node for bc_type 2 (the
    gradient does not see the constant).  The result is orthogonal to every
    conforming gradient in that space.
    """
    space = conforming_space(ctx.disc, ctx.k + 1)
    G = gradient_matrix(ctx.disc, space)
    K = stiffness(ctx.disc, space)
    free = space.interior if bc_type == 1 else np.arange(1, space.dim)
    A = K[free][:, free].tocsc()
    rhs = G[:, free].T @ b0
    phi = np.zeros(space.dim)
    phi[free] = spla.spsolve(A, rhs)
    assert np.all(np.isfinite(phi)), "conforming Laplacian is singular"
    return b0 - G @ phi, phi


def project_C(ctx, b, bc_type=1):
    """Discrete-gradient-corrected projection of a C_h field (k = 1 only)."""
    if ctx.k != 1:
        raise ValueError("the gradient-corrected projection is provided for k = 1 only")
    return gradient_correction(ctx, b, bc_type)[0]


# embedding ------------------------------------------------------------------

def _l3(ctx, b):
    v = FieldTraces.from_coeffs(ctx, b).vol
    return float(ctx.disc.integrate(np.linalg.norm(v, axis=-1) ** 3) ** (1.0 / 3.0))


def embedding_ratios(n, k, samples, seed, bc_type):
    """Ratios ||b||_L3 / (||h^-1/2 [[b]]_T|| + ||curl b||) for weakly div-free b."""
    ctx = FormContext(_mesh(n), k)
    Nc = gram_curl(ctx, bc_type, with_mass=False, with_curl=True)
    Nj = gram_curl(ctx, bc_type, with_mass=False, with_curl=False)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(samples):
        b0 = rng.standard_normal(Nc.shape[0])
        b, _ = gradient_correction(ctx, b0, bc_type)
        jump = np.sqrt(max(b @ (Nj @ b), 0.0))
        curl = np.sqrt(max(b @ (Nc @ b) - b @ (Nj @ b), 0.0))
        out.append(_l3(ctx, b) / (jump + curl))
    return np.array(out)


def embedding_diagnostic(ns=(1, 2, 3, 4), k=1, samples=20, seed=0, bc_type=1):
    """Boundedness of the discrete L3 embedding constant under refinement."""
    maxima = {n: float(embedding_ratios(n, k, samples, seed, bc_type).max()) for n in ns}
    first, last = maxima[ns[0]], maxima[ns[-1]]
    return {"bc_type": bc_type, "k": k, "samples": samples, "seed": seed,
            "max_ratio": maxima, "growth": last / first,
            "threshold": EMBEDDING_GROWTH, "passed": bool(last <= EMBEDDING_GROWTH * first)}


# coercivity ------------------------------------------------------------------

def coercivity_diagnostic(ns=(1, 2), ks=(1, 2), samples=50, seed=0, params=None):
    """Sampled gamma in A_h >= gamma nu ||.||_V^2 and M_h >= gamma kappa nu_m |.|^2."""
    params = params or PhysParams()
    rng = np.random.default_rng(seed)
    cases = []
    for n in ns:
        mesh = _mesh(n)
        for k in ks:
            p = params.resolved(k)
            ctx = FormContext(mesh, k)
            A = assemble_Ah(ctx, p)
            M = assemble_Mh(ctx, p, p.bc_type)
            NV = gram_V(ctx)
            NM = gram_curl(ctx, p.bc_type, with_mass=False)
            X = rng.standard_normal((samples, A.shape[0]))
            ga = min((x @ (A @ x)) / (p.nu * (x @ (NV @ x))) for x in X)
            gm = min((x @ (M @ x)) / (p.kappa * p.nu_m * (x @ (NM @ x))) for x in X)
            # spectral bound for A_h: smallest generalized eigenvalue against the V Gram
            lam = sla.eigh(A.toarray(), NV.toarray(), eigvals_only=True,
                           subset_by_index=[0, 0])[0] / p.nu
            cases.append({"n": n, "k": k, "gamma_A": float(ga), "gamma_M": float(gm),
                          "gamma_A_spectral": float(lam)})
    gamma = min(min(c["gamma_A"], c["gamma_M"]) for c in cases)
    return {"cases": cases, "gamma": gamma, "threshold": COERCIVITY_MIN,
            "passed": bool(gamma >= COERCIVITY_MIN)}


# lifting and upwinding ----------------------------------------------------------

def discrete_kernel_sample(B, rng, mean_q):
    """Random u with B u = 0, by projecting out the range of B^T.

    The constant pressure is in the kernel of B^T, so the Gram matrix B B^T
    is made definite with the rank-one mean term.
    """
    u0 = rng.standard_normal(B.shape[1])
    BBt = (B @ B.T).toarray() + np.outer(mean_q, mean_q)
    y = sla.solve(BBt, B @ u0, assume_a="pos")
    return u0 - B.T @ y


def upwind_face_sum(ctx, beta, v):
    """1/2 sum_F <|beta.n| [[v]], [[v]]> over interior faces plus 1/2 <|beta.n| v, v> on the boundary."""
    disc = ctx.disc
    tr = FieldTraces.from_coeffs(ctx, v)
    bn = np.abs(np.einsum("fqa,fa->fq", beta.face[0], disc.normals))
    jump = tr.face[0] - tr.face[1]
    bd = ctx.mesh.boundary_flags
    jump[bd] = tr.face[0][bd]
    return 0.5 * float(np.einsum("fq,fq,fqa,fqa->", disc.fw, bn, jump, jump))


def lemma41_diagnostic(n=2, k=1, samples=20, tests=20, seed=0):
    """Upwind nonnegativity, exact divergence, degree and L2 bound of the lifting."""
    ctx = FormContext(_mesh(n), k)
    B = assemble_Bh(ctx)
    mean_q = np.einsum("eq,eqb->eb", ctx.disc.wq, ctx.tq.vals).ravel()
    lifter = Lifter(ctx)
    rng = np.random.default_rng(seed)
    worst_up = np.inf
    worst_id = worst_div = worst_top = worst_bkr = l2c = 0.0
    for _ in range(samples):
        u = discrete_kernel_sample(B, rng, mean_q)
        u /= np.linalg.norm(u)              # unit L2 norm (orthonormal basis)
        worst_bkr = max(worst_bkr, float(np.abs(B @ u).max()))
        lifted = lifter.lift(u)
        beta = lifted.traces
        worst_div = max(worst_div, float(np.abs(lifter.divergence_moments(lifted)).max()))
        worst_top = max(worst_top, lifter.top_fraction(lifted))
        pl2 = np.sqrt(ctx.disc.integrate((beta.vol ** 2).sum(-1)))
        l2c = max(l2c, float(pl2))
        O = assemble_Oh(ctx, beta)
        bmax = max(np.abs(beta.vol).max(), np.abs(beta.face).max())
        for _ in range(tests):
            v = rng.standard_normal(B.shape[1])
            scale = bmax * (v @ v)
            q = float(v @ (O @ v))
            worst_up = min(worst_up, q / scale)
            fs = upwind_face_sum(ctx, beta, v)
            worst_id = max(worst_id, abs(q - fs) / max(abs(fs), scale * 1e-300))
    passed = (worst_up >= -UPWIND_TOL and worst_div <= DIV_TOL and worst_top <= TOP_TOL
              and l2c <= LIFT_L2_MAX)
    return {"n": n, "k": k, "min_upwind_over_scale": worst_up,
            "upwind_identity_residual": worst_id, "max_div_coefficient": worst_div,
            "max_top_fraction": worst_top, "l2_constant": l2c, "max_B_residual": worst_bkr,
            "thresholds": {"upwind": -UPWIND_TOL, "div": DIV_TOL, "top": TOP_TOL,
                           "l2": LIFT_L2_MAX},
            "passed": bool(passed)}


# solution-level diagnostics ---------------------------------------------------------

def _err_pair(method, report):
    if method == "hdg":
        return report.err_u_hdg, report.err_b_hdg
    return report.err_u_V, report.err_b_C


def pressure_robust_diagnostic(n=3, k=1, amplitudes=(1.0, 51.0), params=None, methods=("hdg", "dg"),
                               tol=1e-8, max_iter=25):
    """Velocity and magnetic errors under a change of pressure amplitude only.

    The pass flag refers to the HDG scheme; DG numbers are reported.
    """
    params = params or PhysParams()
    mesh = _mesh(n)
    out = {"n": n, "k": k, "amplitudes": list(amplitudes)}
    for method in methods:
        runs = [run_mms(method, mesh, k, params, make_default_mms(params.bc_type, a, params=params),
                        tol, max_iter).report for a in amplitudes]
        (u1, b1), (u2, b2) = (_err_pair(method, r) for r in runs)
        out[method] = {
            "err_u": [u1, u2], "err_b": [b1, b2],
            "err_p": [runs[0].err_p_L2, runs[1].err_p_L2],
            "rel_change_u": abs(u2 - u1) / u1, "rel_change_b": abs(b2 - b1) / b1,
            "pressure_error_ratio": runs[1].err_p_L2 / runs[0].err_p_L2,
        }
    h = out.get("hdg")
    out["threshold"] = {"rel_change": PRESSURE_ROBUST_TOL, "pressure_ratio": PRESSURE_CHANGE_MIN}
    out["passed"] = bool(h is not None and h["rel_change_u"] <= PRESSURE_ROBUST_TOL
                         and h["rel_change_b"] <= PRESSURE_ROBUST_TOL
                         and h["pressure_error_ratio"] > PRESSURE_CHANGE_MIN)
    return out


def cross_check_dg_hdg(mms, n=2, k=1, params=None, tol=1e-8, max_iter=25):
    """Velocity and magnetic errors of both schemes, compared in the DG norms."""
    params = params or PhysParams()
    mesh = _mesh(n)
    dg = run_mms("dg", mesh, k, params, mms, tol, max_iter).report
    hdg = run_mms("hdg", mesh, k, params, mms, tol, max_iter).report

    def factor(a, b):
        if a == 0 and b == 0:
            return 1.0
        return max(a, b) / max(min(a, b), 1e-300)

    fu = factor(dg.err_u_V, hdg.err_u_V)
    fb = factor(dg.err_b_C, hdg.err_b_C)
    return {"n": n, "k": k, "dg": {"err_u_V": dg.err_u_V, "err_b_C": dg.err_b_C},
            "hdg": {"err_u_V": hdg.err_u_V, "err_b_C": hdg.err_b_C},
            "factor_u": fu, "factor_b": fb, "threshold": CROSS_CHECK_FACTOR,
            "passed": bool(fu <= CROSS_CHECK_FACTOR and fb <= CROSS_CHECK_FACTOR)}


def stability_diagnostic(ns=(1, 2, 3), k=1, params=None, tol=1e-8, max_iter=25):
    """Stability ratio of the converged DG solution and per-step energy balance."""
    params = params or PhysParams()
    mms = make_default_mms(params.bc_type, params=params)
    ratios, energy = {}, {}
    for n in ns:
        res = run_mms("dg", _mesh(n), k, params, mms, tol, max_iter)
        ratios[n] = float(res.system.stability_ratio(res.solution, mms.f, mms.g))
        energy[n] = float(max(res.state.energy_residuals))
    bound = STABILITY_GROWTH * ratios[ns[0]]
    passed = all(r <= bound for r in ratios.values()) and max(energy.values()) <= ENERGY_TOL
    return {"k": k, "stability_ratio": ratios, "bound": bound,
            "max_energy_residual": energy, "energy_tol": ENERGY_TOL, "passed": bool(passed)}


def hdg_weak_divergence(system, sol, boundary_zero=True):
    """max |(b_h, grad s)| over the nodal basis of continuous P_{k+1} functions s.

    With ``boundary_zero`` the functions vanish on the boundary.
    """
    disc = system.disc
    space = conforming_space(disc, system.k + 1)
    G = gradient_matrix(disc, space)
    vals = G.T @ sol.b.ravel()
    sel = space.interior if boundary_zero else np.arange(space.dim)
    return float(np.abs(vals[sel]).max())


DIAGNOSTICS = ("embedding", "coercivity", "lemma41", "pressure-robust", "cross-check")
