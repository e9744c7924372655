"""Element-local HDG blocks.

For every element K the unknowns (L, u, p, b, w, r, lambda) are coupled to
the face traces (u_hat, b_hat, r_hat) on its four faces and, when the
pressure is split, to the element mean pressure p_bar.  Each call returns

    A  (ne, nl, nl)   local equations acting on local unknowns,
    Bt (ne, nl, nt)   local equations acting on element traces,
    Cg (ne, nt, nl)   transmission rows acting on local unknowns,
    Dg (ne, nt, nt)   transmission rows acting on element traces,
    F  (ne, nl)       local loads.

Local rows are ordered like the unknowns: the L rows hold the gradient
equation, u the momentum equation, p the divergence equation, b the
induction equation, w the curl equation, r the magnetic divergence equation
and lambda the normal-trace equation.

The tangential trace is stored as a tangential field b_hat = sum_t a_t t_t
in the face frame (t_1, t_2) and enters the equations of K as n_K x b_hat.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..fem.basis import poly_dim
from ..fem.layout import interior_face_index

# Levi-Civita symbol
EPS = np.zeros((3, 3, 3))
for _i, _j, _k in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
    EPS[_i, _j, _k] = 1.0
    EPS[_i, _k, _j] = -1.0


@dataclass(frozen=True)
class LocalLayout:
    """Offsets of local unknowns and element traces for one degree k."""

    k: int
    split_pressure: bool

    @property
    def nb(self):
        return poly_dim(self.k)

    @property
    def nbq(self):
        return poly_dim(self.k - 1)

    @property
    def nbs(self):
        return poly_dim(self.k + 1)

    @property
    def nF(self):
        return poly_dim(self.k, 2)

    @property
    def nF2(self):
        return poly_dim(self.k + 1, 2)

    @property
    def n_p(self):
        return self.nbq - 1 if self.split_pressure else self.nbq

    @cached_property
    def local(self):
        nb = self.nb
        sizes = [("L", 9 * nb), ("u", 3 * nb), ("p", self.n_p), ("b", 3 * nb),
                 ("w", 3 * nb), ("r", self.nbs), ("lam", 4 * self.nF)]
        return _slices(sizes)

    @cached_property
    def trace(self):
        sizes = [("uh", 12 * self.nF), ("bh", 8 * self.nF), ("rh", 4 * self.nF2)]
        if self.split_pressure:
            sizes.append(("pbar", 1))
        return _slices(sizes)

    @property
    def nl(self):
        return self.local["lam"].stop

    @property
    def nt(self):
        return list(self.trace.values())[-1].stop


def _slices(sizes):
    out, o = {}, 0
    for name, n in sizes:
        out[name] = slice(o, o + n)
        o += n
    return out


class HdgTables:
    """Basis tables on the volume and on each element's own faces."""

    def __init__(self, disc):
        mesh = disc.mesh
        k = disc.k
        self.disc = disc
        self.k = k
        self.wq = disc.wq
        self.xq = disc.xq
        tk, tq, ts = disc.scalar(k), disc.scalar(k - 1), disc.scalar(k + 1)
        self.P, self.dP = tk.vals, tk.grads
        self.Q, self.dQ = tq.vals, tq.grads
        self.S, self.dS = ts.vals, ts.grads
        self.Pf, self.dPf = tk.elem_face(disc)
        self.Qf, _ = tq.elem_face(disc)
        self.Sf, self.dSf = ts.elem_face(disc)
        ef = mesh.elem_faces
        self.elem_faces = ef
        self.psi = disc.face_basis(k)[ef]
        self.xi = disc.face_basis(k + 1)[ef]
        self.wf = disc.elem_face_weights
        self.n = disc.elem_face_normals
        self.h = disc.hF[ef]
        self.tan = disc.frames.tangents[ef]
        self.xf = disc.elem_face_points
        self.fidx = interior_face_index(mesh)[ef]
        self.volumes = mesh.volumes


def field_at(tab, coeffs):
    """Volume and element-face values of a P_k vector field given by coefficients."""
    ne, nb = tab.P.shape[0], tab.P.shape[2]
    if coeffs is None:
        return (np.zeros(tab.P.shape[:2] + (3,)), np.zeros(tab.Pf.shape[:3] + (3,)))
    c = np.asarray(coeffs, dtype=float).reshape(ne, 3, nb)
    return (np.einsum("eqb,ecb->eqc", tab.P, c), np.einsum("efqb,ecb->efqc", tab.Pf, c))


def stabilization(beta_n):
    """Upwind stabilization S_u = max(beta . n, 0)."""
    return np.maximum(beta_n, 0.0)


def _vv(w, X, Y):
    return np.einsum("eq,eqi,eqj->eij", w, X, Y)


def _ff(w, X, Y):
    """Face integrals summed over the four faces."""
    return np.einsum("efq,efqi,efqj->eij", w, X, Y)


def _fe(w, X, Y):
    """Face integrals kept per face: (ne, 4, ni, nj)."""
    return np.einsum("efq,efqi,efqj->efij", w, X, Y)


def build_local_blocks(tab, lay, params, beta=None, d=None, f=None, g=None):
    """Assemble all element blocks for given convection and coupling fields.

    Parameters
    ----------
    tab : HdgTables
    lay : LocalLayout
    params : PhysParams
    beta, d : array or None
        P_k vector coefficients (ne * 3 nb) of the frozen fields; None means zero.
    f, g : callable or None
        Forcings evaluated at physical points (n, 3) -> (n, 3).
    """
    nu, num, kap = params.nu, params.nu_m, params.kappa
    ne, nq, nb = tab.P.shape
    nF, nF2, nbs = lay.nF, lay.nF2, lay.nbs
    nl, nt = lay.nl, lay.nt
    li, ti = lay.local, lay.trace
    P, dP, Pf = tab.P, tab.dP, tab.Pf
    wq, wf, n, h = tab.wq, tab.wf, tab.n, tab.h
    psi, xi = tab.psi, tab.xi
    if lay.split_pressure:
        Qv, dQ, Qf = tab.Q[..., 1:], tab.dQ[..., 1:, :], tab.Qf[..., 1:]
    else:
        Qv, dQ, Qf = tab.Q, tab.dQ, tab.Qf
    npm = Qv.shape[-1]
    S, dS, Sf = tab.S, tab.dS, tab.Sf

    bv, bf = field_at(tab, beta)
    dv, df = field_at(tab, d)
    bn = np.einsum("efqc,efc->efq", bf, n)
    Su = stabilization(bn)
    dn = np.einsum("efqc,efc->efq", df, n)

    A = np.zeros((ne, nl, nl))
    Bt = np.zeros((ne, nl, nt))
    Cg = np.zeros((ne, nt, nl))
    Dg = np.zeros((ne, nt, nt))
    F = np.zeros((ne, nl))

    def rows(name, comp, size):
        s = li[name]
        return slice(s.start + comp * size, s.start + (comp + 1) * size)

    def trows(name, face, comp, size, ncomp):
        s = ti[name]
        o = s.start + face * ncomp * size + comp * size
        return slice(o, o + size)

    PP_F = _fe(wf, Pf, Pf)                      # (ne,4,nb,nb)
    Ppsi = _fe(wf, Pf, psi)                     # (ne,4,nb,nF)
    psipsi = _fe(wf, psi, psi)                  # (ne,4,nF,nF)

    # (a) gradient equation: (L, G) + (u, div G) - <u_hat, G n>
    for a in range(3):
        for c in range(3):
            r = slice(li["L"].start + (3 * a + c) * nb, li["L"].start + (3 * a + c + 1) * nb)
            A[:, r, r] += np.eye(nb)
            A[:, r, rows("u", a, nb)] += _vv(wq, dP[..., c], P)
            for fc in range(4):
                Bt[:, r, trows("uh", fc, a, nF, 3)] -= Ppsi[:, fc] * n[:, fc, c, None, None]

    # (b) momentum equation
    Dn = np.einsum("efq,efqi,efqj->efij", wf, Pf, Pf)
    conv = np.einsum("eq,eqc,eqic,eqj->eij", wq, bv, dP, P)
    Su_PP = _ff(wf * Su, Pf, Pf)
    Pbn = _fe(wf * (bn - Su), Pf, psi)
    for c in range(3):
        r = rows("u", c, nb)
        for e_ in range(3):
            col = slice(li["L"].start + (3 * c + e_) * nb, li["L"].start + (3 * c + e_ + 1) * nb)
            A[:, r, col] += nu * (_vv(wq, dP[..., e_], P)
                                  - np.einsum("efij,ef->eij", Dn, n[..., e_]))
        if npm:
            A[:, r, li["p"]] += (-_vv(wq, dP[..., c], Qv)
                                 + np.einsum("efq,efqi,efqj,ef->eij", wf, Pf, Qf, n[..., c]))
        A[:, r, rows("u", c, nb)] += -conv + Su_PP
        for fc in range(4):
            Bt[:, r, trows("uh", fc, c, nF, 3)] += Pbn[:, fc]
            lam = slice(li["lam"].start + fc * nF, li["lam"].start + (fc + 1) * nF)
            A[:, r, lam] -= Ppsi[:, fc] * n[:, fc, c, None, None]
        for m in range(3):
            # kappa (curl b, v x d): phi_i (d_c phi_j d_m - delta_cm d . grad phi_j)
            coef = np.einsum("eqj,eq->eqj", dP[..., c], dv[..., m])
            if c == m:
                coef = coef - np.einsum("eqjd,eqd->eqj", dP, dv)
            vol = np.einsum("eq,eqi,eqj->eij", wq, P, coef)
            fco = n[:, :, None, c] * df[..., m] - (dn if c == m else 0.0)
            A[:, r, rows("b", m, nb)] += kap * (vol - _ff(wf * fco, Pf, Pf))
        for fc in range(4):
            for t in range(2):
                tt = tab.tan[:, fc, t]
                co = (n[:, fc, None, c] * np.einsum("eqd,ed->eq", df[:, fc], tt)
                      - dn[:, fc] * tt[:, c, None])
                Bt[:, r, trows("bh", fc, t, nF, 2)] += kap * np.einsum(
                    "eq,eqi,eql->eil", wf[:, fc] * co, Pf[:, fc], psi[:, fc])

    # (c) curl equation: (w, z) - (curl b, z) + <n x b - n x b_hat, z>
    for c in range(3):
        r = rows("w", c, nb)
        A[:, r, rows("w", c, nb)] += np.eye(nb)
        for m in range(3):
            blk = np.zeros((ne, nb, nb))
            for al in range(3):
                e = EPS[c, al, m]
                if e:
                    blk += e * (-_vv(wq, P, dP[..., al])
                                + np.einsum("efij,ef->eij", PP_F, n[..., al]))
            A[:, r, rows("b", m, nb)] += blk
        for fc in range(4):
            for t in range(2):
                nxt = np.cross(n[:, fc], tab.tan[:, fc, t])
                Bt[:, r, trows("bh", fc, t, nF, 2)] -= Ppsi[:, fc] * nxt[:, c, None, None]

    # (d) induction equation
    kn = kap * num
    for m in range(3):
        r = rows("b", m, nb)
        for a in range(3):
            blk = np.zeros((ne, nb, nb))
            for al in range(3):
                e = EPS[a, al, m]
                if e:
                    blk += e * (_vv(wq, dP[..., al], P)
                                - np.einsum("efij,ef->eij", PP_F, n[..., al]))
            A[:, r, rows("w", a, nb)] += kn * blk
            pen = ((1.0 if a == m else 0.0) - n[..., a] * n[..., m]) / h
            A[:, r, rows("b", a, nb)] += kn * np.einsum("efij,ef->eij", PP_F, pen)
            # -kappa (u x d, curl c) + kappa <u x d, n x c>
            coef = np.einsum("eqi,eq->eqi", dP[..., a], dv[..., m])
            if a == m:
                coef = coef - np.einsum("eqid,eqd->eqi", dP, dv)
            vol = np.einsum("eq,eqi,eqj->eij", wq, coef, P)
            fco = n[:, :, None, a] * df[..., m] - (dn if a == m else 0.0)
            A[:, r, rows("u", a, nb)] += kap * (-vol + _ff(wf * fco, Pf, Pf))
        A[:, r, li["r"]] += (_vv(wq, P, dS[..., m])
                             - np.einsum("efq,efqi,efqj,ef->eij", wf, Pf, Sf, n[..., m]))
        for fc in range(4):
            for t in range(2):
                tt = tab.tan[:, fc, t]
                Bt[:, r, trows("bh", fc, t, nF, 2)] -= (
                    kn * Ppsi[:, fc] * (tt[:, m] / h[:, fc])[:, None, None])
            rh = trows("rh", fc, 0, nF2, 1)
            Bt[:, r, rh] += np.einsum("eq,eqi,eql->eil", wf[:, fc], Pf[:, fc],
                                      xi[:, fc]) * n[:, fc, m, None, None]

    # (e) divergence equation: -(div u, q) + <(u - u_hat) . n, q>
    if npm:
        r = li["p"]
        for c in range(3):
            A[:, r, rows("u", c, nb)] += (-_vv(wq, Qv, dP[..., c])
                                          + np.einsum("efq,efqi,efqj,ef->eij", wf, Qf, Pf, n[..., c]))
            for fc in range(4):
                Bt[:, r, trows("uh", fc, c, nF, 3)] -= np.einsum(
                    "eq,eqi,eql->eil", wf[:, fc], Qf[:, fc], psi[:, fc]) * n[:, fc, c, None, None]

    # (f) magnetic divergence: -(b, grad s) + <b . n + (r - r_hat) / h, s>
    r = li["r"]
    for c in range(3):
        A[:, r, rows("b", c, nb)] += (-_vv(wq, dS[..., c], P)
                                      + np.einsum("efq,efqi,efqj,ef->eij", wf, Sf, Pf, n[..., c]))
    A[:, r, li["r"]] += _ff(wf / h[..., None], Sf, Sf)
    for fc in range(4):
        Bt[:, r, trows("rh", fc, 0, nF2, 1)] -= np.einsum(
            "eq,eqi,eql->eil", wf[:, fc] / h[:, fc, None], Sf[:, fc], xi[:, fc])

    # (g) normal-trace equation: <(u - u_hat) . n, eta>
    for fc in range(4):
        r = slice(li["lam"].start + fc * nF, li["lam"].start + (fc + 1) * nF)
        for c in range(3):
            A[:, r, rows("u", c, nb)] += Ppsi[:, fc].transpose(0, 2, 1) * n[:, fc, c, None, None]
            Bt[:, r, trows("uh", fc, c, nF, 3)] -= psipsi[:, fc] * n[:, fc, c, None, None]

    # transmission rows -------------------------------------------------
    psiPsi_S = _fe(wf * (Su - bn), psi, psi)
    psiP_S = _fe(wf * Su, psi, Pf)
    for fc in range(4):
        for c in range(3):
            r = trows("uh", fc, c, nF, 3)
            for e_ in range(3):
                col = slice(li["L"].start + (3 * c + e_) * nb, li["L"].start + (3 * c + e_ + 1) * nb)
                Cg[:, r, col] += nu * Ppsi[:, fc].transpose(0, 2, 1) * n[:, fc, e_, None, None]
            if npm:
                Cg[:, r, li["p"]] -= np.einsum("eq,eql,eqj->elj", wf[:, fc], psi[:, fc],
                                               Qf[:, fc]) * n[:, fc, c, None, None]
            if lay.split_pressure:
                Dg[:, r, ti["pbar"]] -= (np.einsum("eq,eql->el", wf[:, fc], psi[:, fc])
                                         * n[:, fc, c, None])[..., None]
            Cg[:, r, rows("u", c, nb)] -= psiP_S[:, fc]
            Dg[:, r, r] += psiPsi_S[:, fc]
            lam = slice(li["lam"].start + fc * nF, li["lam"].start + (fc + 1) * nF)
            Cg[:, r, lam] += psipsi[:, fc] * n[:, fc, c, None, None]
        for t in range(2):
            r = trows("bh", fc, t, nF, 2)
            tt = tab.tan[:, fc, t]
            nxt = np.cross(n[:, fc], tt)
            dt = np.einsum("eqd,ed->eq", df[:, fc], tt)
            for a in range(3):
                base = np.einsum("eq,eql,eqj->elj", wf[:, fc], psi[:, fc], Pf[:, fc])
                Cg[:, r, rows("w", a, nb)] += kn * base * nxt[:, a, None, None]
                Cg[:, r, rows("b", a, nb)] -= kn * base * (tt[:, a] / h[:, fc])[:, None, None]
                co = n[:, fc, None, a] * dt - tt[:, a, None] * dn[:, fc]
                Cg[:, r, rows("u", a, nb)] -= kap * np.einsum(
                    "eq,eql,eqj->elj", wf[:, fc] * co, psi[:, fc], Pf[:, fc])
            Dg[:, r, r] += kn * psipsi[:, fc] / h[:, fc, None, None]
        r = trows("rh", fc, 0, nF2, 1)
        for c in range(3):
            Cg[:, r, rows("b", c, nb)] += np.einsum(
                "eq,eql,eqj->elj", wf[:, fc], xi[:, fc], Pf[:, fc]) * n[:, fc, c, None, None]
        Cg[:, r, li["r"]] += np.einsum("eq,eql,eqj->elj", wf[:, fc] / h[:, fc, None],
                                       xi[:, fc], Sf[:, fc])
        Dg[:, r, r] -= np.einsum("eq,eql,eqj->elj", wf[:, fc] / h[:, fc, None],
                                 xi[:, fc], xi[:, fc])
    if lay.split_pressure:
        # -(div u, 1)_K + <(u - u_hat) . n, 1>_dK on the element mean pressure
        r = ti["pbar"]
        for c in range(3):
            Cg[:, r, rows("u", c, nb)] += (-np.einsum("eq,eqj->ej", wq, dP[..., c])
                                           + np.einsum("efq,efqj,ef->ej", wf, Pf, n[..., c]))[:, None, :]
            for fc in range(4):
                Dg[:, r, trows("uh", fc, c, nF, 3)] -= (
                    np.einsum("eq,eql->el", wf[:, fc], psi[:, fc]) * n[:, fc, c, None])[:, None, :]

    # loads ---------------------------------------------------------------
    if f is not None:
        fv = np.asarray(f(tab.xq.reshape(-1, 3)), dtype=float).reshape(ne, nq, 3)
        F[:, li["u"]] = np.einsum("eq,eqi,eqc->eci", wq, P, fv).reshape(ne, -1)
    if g is not None:
        gv = np.asarray(g(tab.xq.reshape(-1, 3)), dtype=float).reshape(ne, nq, 3)
        F[:, li["b"]] = np.einsum("eq,eqi,eqc->eci", wq, P, gv).reshape(ne, -1)
    return A, Bt, Cg, Dg, F


def trace_global_map(tab, lay, offsets, ne):
    """Global index of every element trace slot (-1 where the trace vanishes)."""
    nF, nF2 = lay.nF, lay.nF2
    fidx = tab.fidx
    out = np.full((ne, lay.nt), -1, dtype=np.int64)
    loc = np.arange(3 * nF)
    for fc in range(4):
        ii = fidx[:, fc]
        ok = ii >= 0
        s = lay.trace["uh"].start + fc * 3 * nF
        out[ok, s:s + 3 * nF] = offsets["uh"] + ii[ok, None] * 3 * nF + loc[None, :]
        s = lay.trace["bh"].start + fc * 2 * nF
        out[ok, s:s + 2 * nF] = offsets["bh"] + ii[ok, None] * 2 * nF + loc[None, :2 * nF]
        s = lay.trace["rh"].start + fc * nF2
        out[ok, s:s + nF2] = offsets["rh"] + ii[ok, None] * nF2 + np.arange(nF2)[None, :]
    if lay.split_pressure:
        out[:, lay.trace["pbar"]] = offsets["pbar"] + np.arange(ne)[:, None]
    return out
