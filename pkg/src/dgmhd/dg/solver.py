"""Linearized DG system and the Picard fixed-point driver.

Global unknown ordering: [u | p | b | r | mean multipliers], with one
multiplier for the zero mean of p and, for bc_type 2, one for r.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..fem.layout import build_dof_layout
from ..linalg import ConvergenceError, dump_matrix_market, factorize, solve
from .forms import (FieldTraces, FormContext, PhysParams, assemble_Ah, assemble_Bh,
                    assemble_Ch, assemble_Dh, assemble_Jh, assemble_Mh, assemble_Oh,
                    gram_curl, gram_S, gram_V, load_vector)
from .postprocess import Lifter


@dataclass
class MhdSolution:
    u: np.ndarray
    p: np.ndarray
    b: np.ndarray
    r: np.ndarray
    multipliers: np.ndarray
    residual: float = 0.0

    def copy(self):
        return MhdSolution(self.u.copy(), self.p.copy(), self.b.copy(), self.r.copy(),
                           self.multipliers.copy(), self.residual)


@dataclass
class PicardState:
    beta: object
    d: np.ndarray
    iterations: int = 0
    increments: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    energy_residuals: list = field(default_factory=list)
    smallness: dict = field(default_factory=dict)
    converged: bool = False
    contraction_warning: bool = False


def smallness_quantities(params, f_norm, g_norm):
    """The four data-smallness quantities of the well-posedness theory."""
    nu, nm, ka = params.nu, params.nu_m, params.kappa
    return {
        "f_over_nu2": f_norm / nu ** 2,
        "f_over_nu_num": f_norm / (nu * nm),
        "g_over_nu32_k12_num12": g_norm / (nu ** 1.5 * ka ** 0.5 * nm ** 0.5),
        "g_over_nu12_k12_num32": g_norm / (nu ** 0.5 * ka ** 0.5 * nm ** 1.5),
    }


class DgSystem:
    """Assembles and solves the linearized DG system on one mesh.

    Blocks that do not depend on (beta, d) are assembled once.
    """

    def __init__(self, mesh, k, params, quad_degree=None, lifting="bdm"):
        self.params = params.resolved(k)
        self.bc_type = self.params.bc_type
        self.mesh = mesh
        self.k = k
        self.layout = build_dof_layout(mesh, k, "dg", self.bc_type)
        self.ctx = FormContext(mesh, k, quad_degree)
        self.lifter = Lifter(self.ctx, lifting)
        p = self.params
        self.A = assemble_Ah(self.ctx, p)
        self.B = assemble_Bh(self.ctx)
        self.M = assemble_Mh(self.ctx, p, self.bc_type)
        self.D = assemble_Dh(self.ctx, self.bc_type)
        self.J = assemble_Jh(self.ctx, p, self.bc_type)
        self.NV = gram_V(self.ctx)
        self.NC = gram_curl(self.ctx, self.bc_type)
        self.NS = gram_S(self.ctx, self.bc_type)
        self.nV = self.layout.dim("V")
        self.nQ = self.layout.dim("Q")
        self.nC = self.layout.dim("C")
        self.nS = self.layout.dim("S")
        disc = self.ctx.disc
        self.mean_q = np.einsum("eq,eqb->eb", disc.wq, self.ctx.tq.vals).ravel()
        self.mean_s = np.einsum("eq,eqb->eb", disc.wq, self.ctx.ts.vals).ravel()
        self.n_mult = 2 if self.bc_type == 2 else 1
        o = np.cumsum([0, self.nV, self.nQ, self.nC, self.nS, self.n_mult])
        self.offsets = {"u": o[0], "p": o[1], "b": o[2], "r": o[3], "mult": o[4]}
        self.size = int(o[-1])
        self.last_matrix = None

    # assembly -------------------------------------------------------------
    def zero_field(self):
        return FieldTraces.zeros(self.ctx)

    def field(self, coeffs):
        return FieldTraces.from_coeffs(self.ctx, coeffs)

    def blocks(self, beta, d):
        O = assemble_Oh(self.ctx, beta)
        X_ub, X_bu = assemble_Ch(self.ctx, self.params, d)
        return O, X_ub, X_bu

    def matrix(self, beta, d):
        O, X_ub, X_bu = self.blocks(beta, d)
        mq = sp.csr_matrix(self.mean_q.reshape(-1, 1))
        if self.bc_type == 2:
            ms = sp.csr_matrix(self.mean_s.reshape(-1, 1))
            mult_p = sp.hstack([mq, sp.csr_matrix((self.nQ, 1))])
            mult_r = sp.hstack([sp.csr_matrix((self.nS, 1)), ms])
            mult_r_T = mult_r.T
        else:
            mult_p, mult_r, mult_r_T = mq, None, None
        rows = [
            [self.A + O, self.B.T, X_ub, None, None],
            [self.B, None, None, None, mult_p],
            [X_bu, None, self.M, self.D.T, None],
            [None, None, self.D, -self.J, mult_r],
            [None, mult_p.T, None, mult_r_T, None],
        ]
        return sp.bmat(rows, format="csr")

    def rhs(self, f, g):
        out = np.zeros(self.size)
        o = self.offsets
        if f is not None:
            out[o["u"]:o["p"]] = load_vector(self.ctx, f)
        if g is not None:
            out[o["b"]:o["r"]] = load_vector(self.ctx, g)
        return out

    def split(self, x):
        o = self.offsets
        return MhdSolution(x[o["u"]:o["p"]].copy(), x[o["p"]:o["b"]].copy(),
                           x[o["b"]:o["r"]].copy(), x[o["r"]:o["mult"]].copy(),
                           x[o["mult"]:].copy())

    def join(self, sol):
        return np.concatenate([sol.u, sol.p, sol.b, sol.r, sol.multipliers])

    def solve_linearized(self, beta, d, f, g, rhs=None, dump=None):
        K = self.matrix(beta, d)
        F = self.rhs(f, g) if rhs is None else rhs
        if dump:
            dump_matrix_market(K, dump)
        x = solve(factorize(K), F)
        res = np.linalg.norm(K @ x - F) / max(
            sp.linalg.norm(K) * np.linalg.norm(x) + np.linalg.norm(F), 1e-300)
        self.last_matrix = K
        sol = self.split(x)
        sol.residual = float(res)
        return sol

    # norms ---------------------------------------------------------------
    def norm_V(self, u):
        return float(np.sqrt(max(u @ (self.NV @ u), 0.0)))

    def norm_C(self, b):
        return float(np.sqrt(max(b @ (self.NC @ b), 0.0)))

    def norm_S(self, r):
        return float(np.sqrt(max(r @ (self.NS @ r), 0.0)))

    def norm_L3(self, b):
        vals = self.field(b).vol
        return float(self.ctx.disc.integrate(np.linalg.norm(vals, axis=-1) ** 3) ** (1.0 / 3.0))

    def l2_norm_function(self, func):
        disc = self.ctx.disc
        if func is None:
            return 0.0
        vals = np.asarray(func(disc.xq.reshape(-1, 3))).reshape(disc.xq.shape)
        return float(np.sqrt(disc.integrate((vals ** 2).sum(-1))))

    def combined_norm(self, u, b):
        p = self.params
        return np.sqrt(p.nu) * self.norm_V(u) + np.sqrt(p.kappa * p.nu_m) * self.norm_C(b)

    def energy_balance(self, sol, beta, f, g):
        """Return (lhs, rhs) of A+O+M+J = (f,u)+(g,b) for a linearized solution."""
        O, _, _ = self.blocks(beta, self.zero_field())
        u, b, r = sol.u, sol.b, sol.r
        lhs = u @ (self.A @ u) + u @ (O @ u) + b @ (self.M @ b) + r @ (self.J @ r)
        F = self.rhs(f, g)
        o = self.offsets
        rhs = F[o["u"]:o["p"]] @ u + F[o["b"]:o["r"]] @ b
        return float(lhs), float(rhs)

    def stability_ratio(self, sol, f, g):
        p = self.params
        num = (np.sqrt(p.nu) * self.norm_V(sol.u)
               + np.sqrt(p.kappa * p.nu_m) * (self.norm_L3(sol.b) + self.norm_C(sol.b)))
        den = (self.l2_norm_function(f) / np.sqrt(p.nu)
               + self.l2_norm_function(g) / np.sqrt(p.kappa * p.nu_m))
        return num / den if den > 0 else 0.0

    # Picard ----------------------------------------------------------------
    def picard(self, f, g, tol=1e-8, max_iter=25, raise_on_failure=True, dump=None):
        beta = self.zero_field()
        lifted = None
        d_coeffs = np.zeros(self.nC)
        d = self.zero_field()
        prev = None
        state = PicardState(beta=None, d=d_coeffs)
        state.smallness = smallness_quantities(self.params, self.l2_norm_function(f),
                                               self.l2_norm_function(g))
        F = self.rhs(f, g)
        sol = None
        for it in range(1, max_iter + 1):
            sol = self.solve_linearized(beta, d, f, g, rhs=F, dump=dump if it == 1 else None)
            lhs, rhs = self.energy_balance(sol, beta, f, g)
            state.energy_residuals.append(abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
            du = sol.u if prev is None else sol.u - prev.u
            db = sol.b if prev is None else sol.b - prev.b
            inc = self.combined_norm(du, db)
            state.increments.append(inc)
            if len(state.increments) > 1 and state.increments[-2] > 0:
                state.ratios.append(inc / state.increments[-2])
                if state.ratios[-1] >= 1.0:
                    state.contraction_warning = True
            state.iterations = it
            size = self.combined_norm(sol.u, sol.b)
            if inc <= tol * size or size == 0.0:
                state.converged = True
                break
            prev = sol
            lifted = self.lifter.lift(sol.u)
            beta = lifted.traces
            d_coeffs = sol.b.copy()
            d = self.field(d_coeffs)
        state.beta = lifted
        state.d = d_coeffs
        if not state.converged and raise_on_failure:
            raise ConvergenceError(
                f"Picard iteration did not converge in {max_iter} steps", state.increments)
        return sol, state


def solve_linearized(mesh, layout, params, beta, d, f, g):
    """Solve one linearized DG system for given convection field and coupling field.

    ``beta`` and ``d`` are FieldTraces (or None for zero fields).
    """
    system = DgSystem(mesh, layout.k, params.__class__(**{**params.__dict__, "bc_type": layout.bc_type}))
    beta = system.zero_field() if beta is None else beta
    d = system.zero_field() if d is None else d
    return system.solve_linearized(beta, d, f, g)


def picard_solve(mesh, layout, params, f, g, tol=1e-8, max_iter=25):
    system = DgSystem(mesh, layout.k, params.__class__(**{**params.__dict__, "bc_type": layout.bc_type}))
    return system.picard(f, g, tol, max_iter)
