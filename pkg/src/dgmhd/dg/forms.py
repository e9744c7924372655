"""Bilinear and trilinear forms of the mixed interior-penalty DG method.

Each ``assemble_*`` returns a CSR block with rows indexed by the test space
and columns by the trial space.  Face terms are written with side operators:
side 0 is the owner of the face, side 1 the neighbor; the jump sign is +1/-1
and the average weight 1/2 (1 on boundary faces).
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..fem.space import (Discretization, cross_n, curl_from_grads, div_from_grads,
                         vec_grads, vec_values)
from ..linalg import TripletBuffer, to_csr

UPWIND_TOL = 1e-13


@dataclass(frozen=True)
class PhysParams:
    """Physical and penalty parameters; penalties default to 10 (k+1)^2 and 1."""

    nu: float = 1.0
    nu_m: float = 1.0
    kappa: float = 1.0
    a0: float = None
    m0: float = None
    s0: float = 1.0
    bc_type: int = 1

    def __post_init__(self):
        for name in ("nu", "nu_m", "kappa", "s0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"parameter {name} must be > 0, got {getattr(self, name)}")
        for name in ("a0", "m0"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"parameter {name} must be > 0, got {v}")
        if self.bc_type not in (1, 2):
            raise ValueError(f"bc_type must be 1 or 2, got {self.bc_type}")

    def resolved(self, k):
        """Copy with default penalties filled in for degree k."""
        d = 10.0 * (k + 1) ** 2
        return PhysParams(self.nu, self.nu_m, self.kappa,
                          d if self.a0 is None else self.a0,
                          d if self.m0 is None else self.m0, self.s0, self.bc_type)


class FormContext:
    """Tabulated vector and scalar bases for the spaces V_h, C_h, Q_h, S_h."""

    def __init__(self, mesh, k, quad_degree=None):
        self.disc = Discretization(mesh, k, quad_degree)
        self.mesh = mesh
        self.k = k
        self.tk = self.disc.scalar(k)
        self.tq = self.disc.scalar(k - 1)
        self.ts = self.disc.scalar(k + 1)
        self.nb = self.tk.nb
        sign, avg = self.disc.face_sides()
        self.sign = sign[:, :, None]          # (2, nf, 1)
        self.avg = avg[:, :, None]
        self.n = self.disc.normals[None, :, None, :]   # (1, nf, 1, 3)
        self.interior = ~mesh.boundary_flags

    # vector P_k basis
    @cached_property
    def V(self):
        return vec_values(self.tk.vals)

    @cached_property
    def G(self):
        return vec_grads(self.tk.grads)

    @cached_property
    def curl(self):
        return curl_from_grads(self.G)

    @cached_property
    def div(self):
        return div_from_grads(self.G)

    @cached_property
    def FV(self):
        return vec_values(self.tk.face_vals)

    @cached_property
    def FG(self):
        return vec_grads(self.tk.face_grads)

    @cached_property
    def Fcurl(self):
        return curl_from_grads(self.FG)

    def elem_dofs(self, ldim):
        return np.arange(self.mesh.n_elements * ldim).reshape(-1, ldim)

    # side operators, all shaped (2, nf, nqf, ndof, m)
    def jump_full(self):
        """[[v]] = v (x) n_K summed over sides, flattened to 9 entries."""
        v = self.FV[..., :, None] * self.n[..., None, None, :]
        return (self.sign[..., None, None, None] * v).reshape(v.shape[:-2] + (9,))

    def avg_grad(self):
        g = self.FG * self.avg[..., None, None, None]
        return g.reshape(g.shape[:-2] + (9,))

    def jump_normal(self):
        v = np.einsum("sfqia,sfqa->sfqi", self.FV, np.broadcast_to(self.n, self.FV.shape[:3] + (3,)))
        return (self.sign[..., None] * v)[..., None]

    def jump_tangential(self):
        nx = np.broadcast_to(self.n[..., None, :], self.FV.shape)
        return self.sign[..., None, None] * np.cross(nx, self.FV)

    def avg_curl(self):
        return self.Fcurl * self.avg[..., None, None]

    def avg_vec(self):
        return self.FV * self.avg[..., None, None]


def face_assemble(ctx, buf, row_dofs, col_dofs, terms, mask=None):
    """Scatter face integrals sum_terms coef * <test_op, trial_op> into ``buf``.

    ``terms`` holds (test_op, trial_op, coef) with ops (2, nf, nqf, n, m) and
    coef broadcastable to (2, 2, nf, nqf) (test side, trial side).
    """
    mesh = ctx.mesh
    disc = ctx.disc
    keep = np.ones(mesh.n_faces, bool) if mask is None else mask
    elem = [mesh.face_owner, np.where(mesh.face_neighbor >= 0, mesh.face_neighbor, mesh.face_owner)]
    for t in (0, 1):
        for s in (0, 1):
            faces = keep if (t == 0 and s == 0) else keep & ctx.interior
            if not faces.any():
                continue
            idx = np.flatnonzero(faces)
            blk = 0.0
            for test, trial, coef in terms:
                c = np.broadcast_to(np.asarray(coef, dtype=float), (2, 2) + disc.fw.shape)[t, s]
                w = (disc.fw * c)[idx]
                blk = blk + np.einsum("fq,fqia,fqja->fij", w, test[t][idx], trial[s][idx])
            buf.add_block(row_dofs[elem[t][idx]], col_dofs[elem[s][idx]], blk)


def _mask(ctx, bc_type):
    return None if bc_type == 1 else ctx.interior.copy()


def assemble_Ah(ctx, params):
    """Symmetric interior penalty form for -nu Laplacian, all faces."""
    p = params.resolved(ctx.k)
    disc = ctx.disc
    dofs = ctx.elem_dofs(3 * ctx.nb)
    buf = TripletBuffer()
    vol = p.nu * np.einsum("eq,eqicd,eqjcd->eij", disc.wq, ctx.G, ctx.G)
    buf.add_block(dofs, dofs, vol)
    J = ctx.jump_full()
    A = ctx.avg_grad()
    pen = p.nu * p.a0 / disc.hF[:, None]
    face_assemble(ctx, buf, dofs, dofs, [(J, A, -p.nu), (A, J, -p.nu), (J, J, pen)])
    n = dofs.size
    return to_csr(buf, n, n)


def assemble_Bh(ctx):
    """B[q, v] = -(div v, q) + <{{q}}, [[v]]_N>, all faces."""
    disc = ctx.disc
    qd = ctx.elem_dofs(ctx.tq.nb)
    vd = ctx.elem_dofs(3 * ctx.nb)
    buf = TripletBuffer()
    vol = -np.einsum("eq,eqi,eqj->eij", disc.wq, ctx.tq.vals, ctx.div)
    buf.add_block(qd, vd, vol)
    avg_q = (ctx.tq.face_vals * ctx.avg[..., None])[..., None]
    face_assemble(ctx, buf, qd, vd, [(avg_q, ctx.jump_normal(), 1.0)])
    return to_csr(buf, qd.size, vd.size)


def assemble_Mh(ctx, params, bc_type=None):
    """Symmetric interior penalty curl-curl form (interior faces only for bc_type 2)."""
    p = params.resolved(ctx.k)
    bc = p.bc_type if bc_type is None else bc_type
    disc = ctx.disc
    dofs = ctx.elem_dofs(3 * ctx.nb)
    km = p.kappa * p.nu_m
    buf = TripletBuffer()
    buf.add_block(dofs, dofs, km * np.einsum("eq,eqia,eqja->eij", disc.wq, ctx.curl, ctx.curl))
    JT = ctx.jump_tangential()
    AC = ctx.avg_curl()
    pen = km * p.m0 / disc.hF[:, None]
    face_assemble(ctx, buf, dofs, dofs, [(JT, AC, -km), (AC, JT, -km), (JT, JT, pen)],
                  mask=_mask(ctx, bc))
    n = dofs.size
    return to_csr(buf, n, n)


def assemble_Dh(ctx, bc_type=1):
    """D[s, b] = (b, grad s) - <{{b}}, [[s]]>."""
    disc = ctx.disc
    sd = ctx.elem_dofs(ctx.ts.nb)
    bd = ctx.elem_dofs(3 * ctx.nb)
    buf = TripletBuffer()
    vol = np.einsum("eq,eqia,eqja->eij", disc.wq, ctx.ts.grads, ctx.V)
    buf.add_block(sd, bd, vol)
    js = ctx.sign[..., None, None] * ctx.ts.face_vals[..., None] * ctx.n[..., None, :]
    face_assemble(ctx, buf, sd, bd, [(js, ctx.avg_vec(), -1.0)], mask=_mask(ctx, bc_type))
    return to_csr(buf, sd.size, bd.size)


def assemble_Jh(ctx, params, bc_type=None):
    """J[s, r] = s0 / (kappa nu_m h_F) <[[r]], [[s]]>."""
    p = params.resolved(ctx.k)
    bc = p.bc_type if bc_type is None else bc_type
    sd = ctx.elem_dofs(ctx.ts.nb)
    buf = TripletBuffer()
    js = (ctx.sign[..., None] * ctx.ts.face_vals)[..., None]
    coef = p.s0 / (p.kappa * p.nu_m * ctx.disc.hF[:, None])
    face_assemble(ctx, buf, sd, sd, [(js, js, coef)], mask=_mask(ctx, bc))
    return to_csr(buf, sd.size, sd.size)


@dataclass
class FieldTraces:
    """A vector field sampled at volume points and on both sides of every face."""

    vol: np.ndarray
    face: np.ndarray

    @classmethod
    def zeros(cls, ctx):
        return cls(np.zeros(ctx.disc.xq.shape), np.zeros((2,) + ctx.disc.fx.shape))

    @classmethod
    def from_coeffs(cls, ctx, coeffs):
        c = np.asarray(coeffs).reshape(ctx.mesh.n_elements, 3 * ctx.nb)
        vol = np.einsum("eqia,ei->eqa", ctx.V, c)
        mesh = ctx.mesh
        nbr = np.where(mesh.face_neighbor >= 0, mesh.face_neighbor, mesh.face_owner)
        own = np.einsum("fqia,fi->fqa", ctx.FV[0], c[mesh.face_owner])
        oth = np.einsum("fqia,fi->fqa", ctx.FV[1], c[nbr])
        return cls(vol, np.stack([own, oth]))


def assemble_Oh(ctx, beta, check_div=True, div_tol=1e-9):
    """Upwind convection form with the inflow part decided per quadrature point."""
    disc = ctx.disc
    dofs = ctx.elem_dofs(3 * ctx.nb)
    if check_div:
        check_convection_field(ctx, beta, div_tol)
    buf = TripletBuffer()
    vol = np.einsum("eq,eqd,eqjcd,eqic->eij", disc.wq, beta.vol, ctx.G, ctx.V)
    buf.add_block(dofs, dofs, vol)
    bn = np.einsum("fqa,fa->fq", beta.face[0], disc.normals)
    inflow_own = np.where(bn < -UPWIND_TOL, bn, 0.0)
    inflow_nbr = np.where(bn > UPWIND_TOL, bn, 0.0)
    coef = np.stack([np.stack([-inflow_own, inflow_own]),
                     np.stack([-inflow_nbr, inflow_nbr])])
    face_assemble(ctx, buf, dofs, dofs, [(ctx.FV, ctx.FV, coef)])
    n = dofs.size
    return to_csr(buf, n, n)


def check_convection_field(ctx, beta, tol):
    """Precondition of the upwind form: the field needs a normal trace that is single valued."""
    bd = ctx.mesh.boundary_flags
    n = ctx.disc.normals
    jump = np.einsum("fqa,fa->fq", beta.face[0] - beta.face[1], n)[~bd]
    scale = max(np.abs(beta.face).max(), np.abs(beta.vol).max(), 1e-300)
    if np.abs(jump).max(initial=0.0) > tol * scale:
        raise ValueError("convection field is not H(div)-conforming "
                         f"(normal jump {np.abs(jump).max():.3e})")


def assemble_Ch(ctx, params, d):
    """Coupling blocks (X_ub, X_bu): rows of X_ub test velocity, columns magnetic field.

    X_ub realizes C_h(d; v, b); X_bu realizes -C_h(d; u, c) and is assembled
    separately so the transpose pairing can be checked.
    """
    p = params.resolved(ctx.k)
    disc = ctx.disc
    dofs = ctx.elem_dofs(3 * ctx.nb)
    kap = p.kappa
    dv = d.vol[:, :, None, :]
    vxd = np.cross(ctx.V, np.broadcast_to(dv, ctx.V.shape))
    fvxd = np.cross(ctx.FV, np.broadcast_to(d.face[:, :, :, None, :], ctx.FV.shape))
    avg_vxd = fvxd * ctx.avg[..., None, None]
    JT = ctx.jump_tangential()
    n = dofs.size

    buf = TripletBuffer()
    buf.add_block(dofs, dofs, kap * np.einsum("eq,eqia,eqja->eij", disc.wq, vxd, ctx.curl))
    face_assemble(ctx, buf, dofs, dofs, [(avg_vxd, JT, -kap)], mask=ctx.interior.copy())
    X_ub = to_csr(buf, n, n)

    buf = TripletBuffer()
    buf.add_block(dofs, dofs, -kap * np.einsum("eq,eqia,eqja->eij", disc.wq, ctx.curl, vxd))
    face_assemble(ctx, buf, dofs, dofs, [(JT, avg_vxd, kap)], mask=ctx.interior.copy())
    X_bu = to_csr(buf, n, n)
    return X_ub, X_bu


def load_vector(ctx, func):
    """(f, v) for a vector function evaluated at physical points."""
    disc = ctx.disc
    vals = np.asarray(func(disc.xq.reshape(-1, 3))).reshape(disc.xq.shape)
    return np.einsum("eq,eqia,eqa->ei", disc.wq, ctx.V, vals).ravel()


# norm Gram matrices -------------------------------------------------------

def gram_V(ctx):
    """||u||_V^2 = ||grad u||^2 + sum_F h_F^{-1} ||[[u]]||^2."""
    disc = ctx.disc
    dofs = ctx.elem_dofs(3 * ctx.nb)
    buf = TripletBuffer()
    buf.add_block(dofs, dofs, np.einsum("eq,eqicd,eqjcd->eij", disc.wq, ctx.G, ctx.G))
    J = ctx.jump_full()
    face_assemble(ctx, buf, dofs, dofs, [(J, J, 1.0 / disc.hF[:, None])])
    return to_csr(buf, dofs.size, dofs.size)


def gram_curl(ctx, bc_type=1, with_mass=True, with_curl=True):
    """||b||^2 + ||curl b||^2 + sum_F h_F^{-1} ||[[b]]_T||^2 (boundary faces only for bc_type 1)."""
    disc = ctx.disc
    dofs = ctx.elem_dofs(3 * ctx.nb)
    buf = TripletBuffer()
    if with_mass:
        buf.add_block(dofs, dofs, np.einsum("eq,eqia,eqja->eij", disc.wq, ctx.V, ctx.V))
    if with_curl:
        buf.add_block(dofs, dofs, np.einsum("eq,eqia,eqja->eij", disc.wq, ctx.curl, ctx.curl))
    JT = ctx.jump_tangential()
    face_assemble(ctx, buf, dofs, dofs, [(JT, JT, 1.0 / disc.hF[:, None])], mask=_mask(ctx, bc_type))
    return to_csr(buf, dofs.size, dofs.size)


def gram_S(ctx, bc_type=1):
    """||grad r||^2 + sum_F h_F^{-1} ||[[r]]||^2."""
    disc = ctx.disc
    sd = ctx.elem_dofs(ctx.ts.nb)
    buf = TripletBuffer()
    buf.add_block(sd, sd, np.einsum("eq,eqia,eqja->eij", disc.wq, ctx.ts.grads, ctx.ts.grads))
    js = (ctx.sign[..., None] * ctx.ts.face_vals)[..., None]
    face_assemble(ctx, buf, sd, sd, [(js, js, 1.0 / disc.hF[:, None])], mask=_mask(ctx, bc_type))
    return to_csr(buf, sd.size, sd.size)
