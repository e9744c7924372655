"""Error norms between discrete solutions and manufactured fields."""
from dataclasses import asdict, dataclass, field

import numpy as np

from ..fem.projection import evaluate, evaluate_face_grads, evaluate_faces, evaluate_grad
from ..fem.space import cross_n, curl_from_grads


@dataclass
class ErrorReport:
    h: float
    bc_type: int
    err_u_V: float
    err_b_C: float
    err_p_L2: float
    err_r_S: float
    err_b_L3: float
    err_u_L2: float = float("nan")
    err_b_L2: float = float("nan")
    err_u_hdg: float = float("nan")
    err_b_hdg: float = float("nan")
    err_r_hdg: float = float("nan")
    picard_iterations: int = 0
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        d = asdict(self)
        if self.bc_type == 2:
            d["err_b_CI"] = d.pop("err_b_C")
            d["err_r_SI"] = d.pop("err_r_S")
        return d


class ExactSampler:
    """Exact fields sampled at the volume and face points of a discretization."""

    def __init__(self, disc, mms):
        self.disc = disc
        xv = disc.xq.reshape(-1, 3)
        sv = disc.xq.shape[:2]
        xf = disc.fx.reshape(-1, 3)
        sf = disc.fx.shape[:2]
        self.u = mms.u(xv).reshape(sv + (3,))
        self.gu = mms.grad_u(xv).reshape(sv + (3, 3))
        self.b = mms.b(xv).reshape(sv + (3,))
        self.curl_b = mms.curl_b(xv).reshape(sv + (3,))
        self.p = mms.p(xv).reshape(sv)
        self.r = mms.r(xv).reshape(sv)
        self.gr = mms.grad_r(xv).reshape(sv + (3,))
        self.uf = mms.u(xf).reshape(sf + (3,))
        self.bf = mms.b(xf).reshape(sf + (3,))
        self.rf = mms.r(xf).reshape(sf)


def _face_jump_sq(disc, e_sides, mask, kind):
    """sum_F h_F^{-1} ||jump||^2 for side errors (2, nf, nq, ...)."""
    sign, _ = disc.face_sides()
    n = disc.normals[:, None, :]
    if kind == "full":
        j = sum(sign[s][:, None, None, None] * e_sides[s][..., :, None] * n[..., None, :] for s in (0, 1))
        sq = (j ** 2).sum(axis=(-1, -2))
    elif kind == "tangential":
        j = sum(sign[s][:, None, None] * cross_n(e_sides[s], n) for s in (0, 1))
        sq = (j ** 2).sum(axis=-1)
    else:
        j = sum(sign[s][:, None] * e_sides[s] for s in (0, 1))
        sq = j ** 2
    w = disc.fw / disc.hF[:, None]
    if mask is not None:
        w = w * mask[:, None]
    return float((w * sq).sum())


def dg_error_components(disc, k, ex, u, b, p, r, bc_type):
    """Squared components of every DG error norm, keyed by name."""
    mesh = disc.mesh
    wq = disc.wq
    interior = (~mesh.boundary_flags).astype(float)
    mask = None if bc_type == 1 else interior
    out = {}
    eu = ex.u - evaluate(disc, u, k, 3)
    egu = ex.gu - evaluate_grad(disc, u, k, 3)
    out["u_L2"] = float(np.einsum("eq,eqa,eqa->", wq, eu, eu))
    out["u_grad"] = float(np.einsum("eq,eqab,eqab->", wq, egu, egu))
    uf = evaluate_faces(disc, u, k, 3)
    e_sides = np.stack([ex.uf - uf[0], ex.uf - uf[1]])
    e_sides[1][mesh.boundary_flags] = 0.0
    out["u_jump"] = _face_jump_sq(disc, e_sides, None, "full")

    eb = ex.b - evaluate(disc, b, k, 3)
    ecb = ex.curl_b - curl_from_grads(evaluate_grad(disc, b, k, 3))
    out["b_L2"] = float(np.einsum("eq,eqa,eqa->", wq, eb, eb))
    out["b_curl"] = float(np.einsum("eq,eqa,eqa->", wq, ecb, ecb))
    out["b_L3"] = float(np.einsum("eq,eq->", wq, np.linalg.norm(eb, axis=-1) ** 3))
    bf = evaluate_faces(disc, b, k, 3)
    e_sides = np.stack([ex.bf - bf[0], ex.bf - bf[1]])
    e_sides[1][mesh.boundary_flags] = 0.0
    out["b_jumpT"] = _face_jump_sq(disc, e_sides, mask, "tangential")

    ep = ex.p - evaluate(disc, p, k - 1, 1)[..., 0]
    out["p_L2"] = float(np.einsum("eq,eq,eq->", wq, ep, ep))

    egr = ex.gr - evaluate_grad(disc, r, k + 1, 1)[:, :, 0, :]
    out["r_grad"] = float(np.einsum("eq,eqa,eqa->", wq, egr, egr))
    rf = evaluate_faces(disc, r, k + 1, 1)[..., 0]
    e_sides = np.stack([ex.rf - rf[0], ex.rf - rf[1]])
    e_sides[1][mesh.boundary_flags] = 0.0
    out["r_jump"] = _face_jump_sq(disc, e_sides, mask, "scalar")
    return out


def compute_errors(solution, mms, system, picard_iterations=0):
    """Errors of a DG solution in the V, C (or C^I), L2 and S (or S^I) norms."""
    disc = system.ctx.disc
    ex = ExactSampler(disc, mms)
    c = dg_error_components(disc, system.k, ex, solution.u, solution.b, solution.p,
                            solution.r, system.bc_type)
    return ErrorReport(
        h=system.mesh.h, bc_type=system.bc_type,
        err_u_V=np.sqrt(c["u_grad"] + c["u_jump"]),
        err_b_C=np.sqrt(c["b_L2"] + c["b_curl"] + c["b_jumpT"]),
        err_p_L2=np.sqrt(c["p_L2"]),
        err_r_S=np.sqrt(c["r_grad"] + c["r_jump"]),
        err_b_L3=c["b_L3"] ** (1.0 / 3.0),
        err_u_L2=np.sqrt(c["u_L2"]), err_b_L2=np.sqrt(c["b_L2"]),
        picard_iterations=picard_iterations)


def hdg_error_components(system, mms, sol):
    """Squared HDG-norm error pieces; the exact field cancels in the trace terms."""
    tab = system.tab
    ne = system.ne
    xq = tab.xq.reshape(-1, 3)
    sv = tab.xq.shape[:2]
    fl = system._local_fields(sol)
    U, Bv, R = system._traces_at_faces(sol)
    wh = tab.wf / tab.h[..., None]
    n = tab.n[:, :, None, :]
    egu = mms.grad_u(xq).reshape(sv + (3, 3)) - fl["gu"]
    ecb = mms.curl_b(xq).reshape(sv + (3,)) - curl_from_grads(fl["gb"])
    egr = mms.grad_r(xq).reshape(sv + (3,)) - fl["gr"]
    du = U - fl["uf"]
    dbt = np.cross(n, Bv - fl["bf"])
    dr = R - fl["rf"]
    return {
        "u": float(np.einsum("eq,eqab,eqab->", tab.wq, egu, egu)
                   + np.einsum("efq,efqc,efqc->", wh, du, du)),
        "b": float(np.einsum("eq,eqa,eqa->", tab.wq, ecb, ecb)
                   + np.einsum("efq,efqc,efqc->", wh, dbt, dbt)),
        "r": float(np.einsum("eq,eqa,eqa->", tab.wq, egr, egr)
                   + np.einsum("efq,efq,efq->", wh, dr, dr)),
    }


def compute_hdg_errors(solution, mms, system, picard_iterations=0):
    """Errors of an HDG solution in its own norms and in the DG norms."""
    disc = system.disc
    ex = ExactSampler(disc, mms)
    c = dg_error_components(disc, system.k, ex, solution.u, solution.b, solution.p,
                            solution.r, 1)
    hc = hdg_error_components(system, mms, solution)
    div = system.divergence_report(solution)
    return ErrorReport(
        h=system.mesh.h, bc_type=1,
        err_u_V=np.sqrt(c["u_grad"] + c["u_jump"]),
        err_b_C=np.sqrt(c["b_L2"] + c["b_curl"] + c["b_jumpT"]),
        err_p_L2=np.sqrt(c["p_L2"]),
        err_r_S=np.sqrt(c["r_grad"] + c["r_jump"]),
        err_b_L3=c["b_L3"] ** (1.0 / 3.0),
        err_u_L2=np.sqrt(c["u_L2"]), err_b_L2=np.sqrt(c["b_L2"]),
        err_u_hdg=np.sqrt(hc["u"]), err_b_hdg=np.sqrt(hc["b"]), err_r_hdg=np.sqrt(hc["r"]),
        picard_iterations=picard_iterations,
        extra={"div_u_max": div["div_u_max"], "u_l2": div["u_l2"],
               "normal_trace_residual": div["normal_trace_residual"]})
