"""Static condensation, reconstruction and the Picard driver for the HDG scheme.

Global (condensed) unknown ordering: [u_hat | b_hat | r_hat | p_bar | mu],
where the traces live on interior faces only and mu is the multiplier of
the zero-mean pressure constraint.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from ..dg.forms import PhysParams
from ..dg.solver import PicardState, smallness_quantities
from ..fem.layout import build_dof_layout
from ..fem.space import Discretization, curl_from_grads
from ..linalg import (ConvergenceError, SingularMatrixError, TripletBuffer,
                      dump_matrix_market, factorize, solve, to_csr)
from .local import HdgTables, LocalLayout, build_local_blocks, field_at, trace_global_map


@dataclass
class HdgSolution:
    """All HDG fields as coefficient arrays.

    Broken fields are element-major, component-major.  ``p`` holds full
    P_{k-1} coefficients (mean plus mean-free part); ``pbar`` the element
    means.  Traces are stored per interior face.
    """

    L: np.ndarray
    u: np.ndarray
    p: np.ndarray
    b: np.ndarray
    w: np.ndarray
    r: np.ndarray
    lam: np.ndarray
    uhat: np.ndarray
    bhat: np.ndarray
    rhat: np.ndarray
    pbar: np.ndarray
    multiplier: float = 0.0
    residual: float = 0.0


@dataclass
class CondensedSystem:
    matrix: object
    rhs: np.ndarray
    XB: np.ndarray          # A^{-1} Bt per element
    XF: np.ndarray          # A^{-1} F per element


class HdgSystem:
    """The HDG discretization of the linearized MHD system on one mesh (bc_type 1)."""

    def __init__(self, mesh, k, params, quad_degree=None):
        if params.bc_type != 1:
            raise ValueError("the HDG scheme supports only bc_type 1")
        self.params = params
        self.mesh = mesh
        self.k = int(k)
        self.layout = build_dof_layout(mesh, k, "hdg", 1)
        self.disc = Discretization(mesh, k, quad_degree)
        self.tab = HdgTables(self.disc)
        self.lay = LocalLayout(self.k, True)
        self.lay_full = LocalLayout(self.k, False)
        nI = len(mesh.interior_faces)
        self.nI = nI
        lay = self.lay
        o = np.cumsum([0, 3 * lay.nF * nI, 2 * lay.nF * nI, lay.nF2 * nI, mesh.n_elements, 1])
        self.offsets = {"uh": o[0], "bh": o[1], "rh": o[2], "pbar": o[3], "mult": o[4]}
        self.size = int(o[5])
        self.tmap = trace_global_map(self.tab, lay, self.offsets, mesh.n_elements)
        self.tmap_full = trace_global_map(self.tab, self.lay_full, self.offsets, mesh.n_elements)
        # value of the constant pressure mode on every element
        self.q0 = self.tab.Q[:, 0, 0]

    @property
    def ne(self):
        return self.mesh.n_elements

    @property
    def condensed_dim(self):
        return self.size

    # condensation ----------------------------------------------------------
    def local_blocks(self, beta=None, d=None, f=None, g=None, split=True):
        lay = self.lay if split else self.lay_full
        return build_local_blocks(self.tab, lay, self.params, beta, d, f, g)

    def condense(self, beta=None, d=None, f=None, g=None):
        A, Bt, Cg, Dg, F = self.local_blocks(beta, d, f, g)
        ne, nl, nt = Bt.shape
        XB = np.empty_like(Bt)
        XF = np.empty_like(F)
        rhs_blocks = np.concatenate([Bt, F[:, :, None]], axis=2)
        for e in range(ne):
            lu, piv = sla.lu_factor(A[e], check_finite=False)
            dg = np.abs(np.diag(lu))
            if dg.min() <= 1e-13 * dg.max():
                i = int(np.argmin(dg))
                raise SingularMatrixError(
                    f"singular local matrix on element {e}: pivot {i} = {dg[i]:.3e}", i)
            X = sla.lu_solve((lu, piv), rhs_blocks[e], check_finite=False)
            XB[e] = X[:, :nt]
            XF[e] = X[:, nt]
        Sk = Dg - np.einsum("eij,ejk->eik", Cg, XB)
        rk = -np.einsum("eij,ej->ei", Cg, XF)
        buf = TripletBuffer()
        tm = self.tmap
        rr = np.broadcast_to(tm[:, :, None], Sk.shape)
        cc = np.broadcast_to(tm[:, None, :], Sk.shape)
        keep = (rr >= 0) & (cc >= 0)
        buf.add(rr[keep], cc[keep], Sk[keep])
        rhs = np.zeros(self.size)
        ok = tm >= 0
        np.add.at(rhs, tm[ok], rk[ok])
        # mean constraint: sum_K |K| p_bar_K = 0, multiplier on the p_bar rows
        vols = self.mesh.volumes
        pb = self.offsets["pbar"] + np.arange(self.ne)
        mu = np.full(self.ne, self.offsets["mult"])
        buf.add(pb, mu, vols)
        buf.add(mu, pb, vols)
        K = to_csr(buf, self.size, self.size)
        return CondensedSystem(K, rhs, XB, XF)

    def reconstruct(self, cs, t):
        """Back-substitute the local unknowns from a global trace vector."""
        tm = self.tmap
        tK = np.where(tm >= 0, t[np.maximum(tm, 0)], 0.0)
        x = cs.XF - np.einsum("eij,ej->ei", cs.XB, tK)
        return self._unpack(x, t, self.lay)

    def _unpack(self, x, t, lay):
        li = lay.local
        ne, nI = self.ne, self.nI
        o = self.offsets
        if lay.split_pressure:
            pbar = t[o["pbar"]:o["pbar"] + ne].copy()
            p = np.zeros((ne, lay.nbq))
            p[:, 0] = pbar / self.q0
            p[:, 1:] = x[:, li["p"]]
            mult = float(t[o["mult"]])
        else:
            p = x[:, li["p"]].copy()
            pbar = p[:, 0] * self.q0
            mult = float(t[-1])
        return HdgSolution(
            L=x[:, li["L"]].reshape(-1), u=x[:, li["u"]].reshape(-1), p=p.reshape(-1),
            b=x[:, li["b"]].reshape(-1), w=x[:, li["w"]].reshape(-1),
            r=x[:, li["r"]].reshape(-1), lam=x[:, li["lam"]].copy(),
            uhat=t[o["uh"]:o["bh"]].reshape(nI, -1).copy(),
            bhat=t[o["bh"]:o["rh"]].reshape(nI, -1).copy(),
            rhat=t[o["rh"]:o["pbar"]].reshape(nI, -1).copy(),
            pbar=pbar, multiplier=mult)

    def solve_linearized(self, beta=None, d=None, f=None, g=None, dump=None):
        cs = self.condense(beta, d, f, g)
        if dump:
            dump_matrix_market(cs.matrix, dump)
        fac = factorize(cs.matrix)
        t = solve(fac, cs.rhs)
        sol = self.reconstruct(cs, t)
        res = np.linalg.norm(cs.matrix @ t - cs.rhs)
        sol.residual = float(res / max(np.linalg.norm(cs.rhs), 1e-300))
        return sol

    # monolithic oracle -----------------------------------------------------
    def monolithic_solve(self, beta=None, d=None, f=None, g=None):
        """Solve the uncondensed system with the full local pressure space.

        All local unknowns of all elements and all traces are global
        unknowns; the pressure mean is fixed by one constraint on the full
        P_{k-1} pressure instead of the element means.
        """
        lay = self.lay_full
        A, Bt, Cg, Dg, F = self.local_blocks(beta, d, f, g, split=False)
        ne, nl, nt = Bt.shape
        nT = self.offsets["pbar"]
        N = ne * nl + nT + 1
        loc = np.arange(ne)[:, None] * nl + np.arange(nl)[None, :]
        tm = np.where(self.tmap_full >= 0, self.tmap_full + ne * nl, -1)
        buf = TripletBuffer()

        def add(rows, cols, vals):
            rr = np.broadcast_to(rows[:, :, None], vals.shape)
            cc = np.broadcast_to(cols[:, None, :], vals.shape)
            keep = (rr >= 0) & (cc >= 0)
            buf.add(rr[keep], cc[keep], vals[keep])

        add(loc, loc, A)
        add(loc, tm, Bt)
        add(tm, loc, Cg)
        add(tm, tm, Dg)
        # zero-mean pressure: (p, 1) = 0 with multiplier in the divergence rows
        pm = np.einsum("eq,eqi->ei", self.tab.wq, self.tab.Q)
        prow = loc[:, lay.local["p"]]
        mu = N - 1
        buf.add(prow.ravel(), np.full(prow.size, mu), pm.ravel())
        buf.add(np.full(prow.size, mu), prow.ravel(), pm.ravel())
        K = to_csr(buf, N, N)
        rhs = np.zeros(N)
        rhs[:ne * nl] = F.ravel()
        x = solve(factorize(K), rhs)
        t = np.concatenate([x[ne * nl:ne * nl + nT], np.zeros(ne), x[-1:]])
        sol = self._unpack(x[:ne * nl].reshape(ne, nl), t, lay)
        sol.multiplier = float(x[-1])
        return sol

    # field evaluation ------------------------------------------------------
    def _traces_at_faces(self, sol):
        """u_hat, b_hat (tangential field) and r_hat at element-face points."""
        tab, lay = self.tab, self.lay
        fidx = tab.fidx
        ok = (fidx >= 0)[..., None, None]
        idx = np.maximum(fidx, 0)
        uh = sol.uhat.reshape(self.nI, 3, lay.nF)[idx]            # (ne,4,3,nF)
        bh = sol.bhat.reshape(self.nI, 2, lay.nF)[idx]
        rh = sol.rhat.reshape(self.nI, lay.nF2)[idx]
        U = np.einsum("efql,efcl->efqc", tab.psi, uh) * ok
        Bc = np.einsum("efql,eftl->efqt", tab.psi, bh)
        Bv = np.einsum("efqt,eftc->efqc", Bc, tab.tan) * ok
        R = np.einsum("efql,efl->efq", tab.xi, rh) * ok[..., 0]
        return U, Bv, R

    def _local_fields(self, sol):
        tab, lay = self.tab, self.lay
        ne, nb = self.ne, lay.nb
        u = sol.u.reshape(ne, 3, nb)
        b = sol.b.reshape(ne, 3, nb)
        r = sol.r.reshape(ne, lay.nbs)
        out = {
            "u": np.einsum("eqb,ecb->eqc", tab.P, u),
            "gu": np.einsum("eqbd,ecb->eqcd", tab.dP, u),
            "uf": np.einsum("efqb,ecb->efqc", tab.Pf, u),
            "b": np.einsum("eqb,ecb->eqc", tab.P, b),
            "gb": np.einsum("eqbd,ecb->eqcd", tab.dP, b),
            "bf": np.einsum("efqb,ecb->efqc", tab.Pf, b),
            "gr": np.einsum("eqbd,eb->eqd", tab.dS, r),
            "rf": np.einsum("efqb,eb->efq", tab.Sf, r),
            "L": np.einsum("eqb,eab->eqa", tab.P, sol.L.reshape(ne, 9, nb)).reshape(ne, -1, 3, 3),
            "w": np.einsum("eqb,ecb->eqc", tab.P, sol.w.reshape(ne, 3, nb)),
        }
        return out

    def hdg_norm_components(self, sol):
        """Squared pieces of the HDG norms of a (difference of) solution(s)."""
        tab = self.tab
        fl = self._local_fields(sol)
        U, Bv, R = self._traces_at_faces(sol)
        wh = tab.wf / tab.h[..., None]
        n = tab.n[:, :, None, :]
        du = fl["uf"] - U
        dbt = np.cross(n, fl["bf"] - Bv)
        curl = curl_from_grads(fl["gb"])
        return {
            "u_grad": float(np.einsum("eq,eqcd,eqcd->", tab.wq, fl["gu"], fl["gu"])),
            "u_jump": float(np.einsum("efq,efqc,efqc->", wh, du, du)),
            "b_curl": float(np.einsum("eq,eqc,eqc->", tab.wq, curl, curl)),
            "b_jump": float(np.einsum("efq,efqc,efqc->", wh, dbt, dbt)),
            "r_grad": float(np.einsum("eq,eqd,eqd->", tab.wq, fl["gr"], fl["gr"])),
            "r_jump": float(np.einsum("efq,efq,efq->", wh, fl["rf"] - R, fl["rf"] - R)),
            "L": float(np.einsum("eq,eqab,eqab->", tab.wq, fl["L"], fl["L"])),
            "w": float(np.einsum("eq,eqc,eqc->", tab.wq, fl["w"], fl["w"])),
        }

    def norm_1h_u(self, sol):
        c = self.hdg_norm_components(sol)
        return np.sqrt(c["u_grad"] + c["u_jump"])

    def norm_C(self, sol):
        c = self.hdg_norm_components(sol)
        return np.sqrt(c["b_curl"] + c["b_jump"])

    def combined_norm(self, sol):
        p = self.params
        c = self.hdg_norm_components(sol)
        return (np.sqrt(p.nu) * np.sqrt(c["u_grad"] + c["u_jump"])
                + np.sqrt(p.kappa * p.nu_m) * np.sqrt(c["b_curl"] + c["b_jump"]))

    # invariants --------------------------------------------------------------
    def divergence_report(self, sol):
        """max_K ||div u_h||_{L2(K)}, ||u_h||_{L2(Omega)} and the normal-trace residual."""
        tab, lay = self.tab, self.lay
        fl = self._local_fields(sol)
        div = np.trace(fl["gu"], axis1=2, axis2=3)
        per_elem = np.sqrt(np.einsum("eq,eq->e", tab.wq, div * div))
        u_l2 = np.sqrt(np.einsum("eq,eqc,eqc->", tab.wq, fl["u"], fl["u"]))
        U, _, _ = self._traces_at_faces(sol)
        jn = np.einsum("efqc,efc->efq", fl["uf"] - U, tab.n)
        mom = np.einsum("efq,efq,efql->efl", tab.wf, jn, tab.psi)
        return {"div_u_max": float(per_elem.max()), "u_l2": float(u_l2),
                "normal_trace_residual": float(np.abs(mom).max())}

    def energy_identity(self, sol, beta=None, f=None, g=None):
        """Both sides of the discrete energy identity, evaluated from the fields.

        lhs = nu ||L||^2 + <(S_u - beta.n/2)(u - u_hat), u - u_hat>
              + kappa nu_m ||w||^2 + kappa nu_m/h ||b^t - b_hat^t||^2 + 1/h ||r - r_hat||^2,
        rhs = (f, u) + (g, b).
        """
        p = self.params
        tab = self.tab
        c = self.hdg_norm_components(sol)
        fl = self._local_fields(sol)
        U, _, _ = self._traces_at_faces(sol)
        _, bf = field_at(tab, beta)
        bn = np.einsum("efqc,efc->efq", bf, tab.n)
        du = fl["uf"] - U
        conv = np.einsum("efq,efq,efqc,efqc->", tab.wf, np.maximum(bn, 0.0) - 0.5 * bn, du, du)
        lhs = (p.nu * c["L"] + conv + p.kappa * p.nu_m * (c["w"] + c["b_jump"]) + c["r_jump"])
        rhs = 0.0
        xq = tab.xq.reshape(-1, 3)
        if f is not None:
            fv = np.asarray(f(xq)).reshape(fl["u"].shape)
            rhs += np.einsum("eq,eqc,eqc->", tab.wq, fv, fl["u"])
        if g is not None:
            gv = np.asarray(g(xq)).reshape(fl["b"].shape)
            rhs += np.einsum("eq,eqc,eqc->", tab.wq, gv, fl["b"])
        return float(lhs), float(rhs)

    def pressure_mean(self, sol):
        ne = self.ne
        pv = np.einsum("eqb,eb->eq", self.tab.Q, sol.p.reshape(ne, -1))
        return float(np.einsum("eq,eq->", self.tab.wq, pv))

    def lift_ratio(self, sol):
        """||(u_h, u_hat)||_{1,h} / ||L_h||."""
        c = self.hdg_norm_components(sol)
        return np.sqrt(c["u_grad"] + c["u_jump"]) / max(np.sqrt(c["L"]), 1e-300)

    # Picard ----------------------------------------------------------------
    def picard(self, f, g, tol=1e-8, max_iter=25, raise_on_failure=True, dump=None):
        state = PicardState(beta=None, d=None)
        state.smallness = smallness_quantities(self.params, self._l2(f), self._l2(g))
        beta = d = None
        prev = sol = None
        for it in range(1, max_iter + 1):
            sol = self.solve_linearized(beta, d, f, g, dump=dump if it == 1 else None)
            lhs, rhs = self.energy_identity(sol, beta, f, g)
            state.energy_residuals.append(abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
            inc = self.combined_norm(sol if prev is None else _diff(sol, prev))
            state.increments.append(inc)
            if len(state.increments) > 1 and state.increments[-2] > 0:
                state.ratios.append(inc / state.increments[-2])
                if state.ratios[-1] >= 1.0:
                    state.contraction_warning = True
            state.iterations = it
            size = self.combined_norm(sol)
            if inc <= tol * size or size == 0.0:
                state.converged = True
                break
            prev = sol
            beta, d = sol.u.copy(), sol.b.copy()
        state.beta, state.d = beta, d
        if not state.converged and raise_on_failure:
            raise ConvergenceError(
                f"HDG Picard iteration did not converge in {max_iter} steps", state.increments)
        return sol, state

    def _l2(self, func):
        v = np.asarray(func(self.tab.xq.reshape(-1, 3))).reshape(self.ne, -1, 3)
        return float(np.sqrt(np.einsum("eq,eqc,eqc->", self.tab.wq, v, v)))


def _diff(a, b):
    return HdgSolution(*(getattr(a, k) - getattr(b, k) for k in
                         ("L", "u", "p", "b", "w", "r", "lam", "uhat", "bhat", "rhat", "pbar")))


def hdg_picard_solve(mesh, layout, params, f, g, tol=1e-8, max_iter=25):
    """Picard iteration for the HDG scheme; returns (solution, state)."""
    system = HdgSystem(mesh, layout.k, params)
    return system.picard(f, g, tol, max_iter)
