"""Local H(div) lifting of a broken velocity field.

The lifted field lives in RT_k(K) = P_k(K)^3 + x P_k(K), stored as a
P_k^3 block (the scaled modal basis of V_h) followed by a block
``x~ h(x~)`` with ``h`` a homogeneous degree-k monomial and
``x~ = (x - x_K) / rho_K`` (x_K the centroid, rho_K the largest
centroid-vertex distance).

Two variants are provided.  ``'bdm'`` (default) fixes the normal moments on
every face against P_k(F), the interior moments against the first-kind
Nedelec space of degree k-1, and asks the divergence to be orthogonal to
the top-degree monomials; for velocities in the kernel of B_h the result is
divergence free and lies in P_k^3.  ``'rt'`` uses interior moments against
P_{k-1}^3 instead and is kept for comparison.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from ..fem.basis import eval_monomials, graded_exponents, homogeneous_exponents, poly_dim
from .forms import FieldTraces


@lru_cache(maxsize=None)
def nedelec_interior_spec(k):
    """Independent spanning functions of the first-kind Nedelec space of degree k-1.

    Returns a list of (kind, exponent, component): kind 'p' is ``m e_c`` and
    kind 'x' is ``x~ cross (m e_c)``.
    """
    if k < 2:
        return ()
    cands = []
    for e in graded_exponents(k - 2, 3):
        for c in range(3):
            cands.append(("p", tuple(e), c))
    for e in homogeneous_exponents(k - 2, 3):
        for c in range(3):
            cands.append(("x", tuple(e), c))
    pts = np.random.default_rng(1234).uniform(-1, 1, size=(80, 3))
    cols = np.concatenate([_nd_eval(pts, [c]).reshape(-1, 1) for c in cands], axis=1)
    _, r, piv = scipy.linalg.qr(cols, pivoting=True, mode="economic")
    d = np.abs(np.diag(r))
    rank = int((d > 1e-10 * d[0]).sum())
    keep = sorted(piv[:rank])
    assert rank == (k - 1) * (k + 1) * (k + 2) // 2
    return tuple(cands[i] for i in keep)


def _nd_eval(xt, spec):
    """Values of the Nedelec spanning functions at points xt (n, 3) -> (n, len(spec), 3)."""
    out = np.zeros((xt.shape[0], len(spec), 3))
    for j, (kind, e, c) in enumerate(spec):
        m = eval_monomials(xt, np.array([e]))[:, 0]
        v = np.zeros((xt.shape[0], 3))
        v[:, c] = m
        out[:, j] = v if kind == "p" else np.cross(xt, v)
    return out


@dataclass
class LiftedField:
    """Coefficients of a lifted field and its samples."""

    coeffs: np.ndarray
    nb: int
    traces: FieldTraces
    variant: str

    @property
    def pk_block(self):
        return self.coeffs[:, :3 * self.nb]

    @property
    def top_block(self):
        return self.coeffs[:, 3 * self.nb:]


class Lifter:
    """Per-mesh tables for the lifting; reused across Picard iterations."""

    def __init__(self, ctx, variant="bdm", boundary="dirichlet"):
        if variant not in ("bdm", "rt"):
            raise ValueError(f"unknown lifting variant {variant!r}")
        if boundary not in ("dirichlet", "inner"):
            raise ValueError(f"unknown boundary trace mode {boundary!r}")
        self.ctx = ctx
        self.variant = variant
        self.boundary = boundary
        k = ctx.k
        mesh = ctx.mesh
        disc = ctx.disc
        self.hexp = homogeneous_exponents(k, 3)
        self.center = mesh.vertices[mesh.tets].mean(axis=1)
        # radius of the circumscribing ball about the centroid keeps |x~| <= 1
        self.hk = np.linalg.norm(mesh.vertices[mesh.tets] - self.center[:, None], axis=2).max(axis=1)
        # trial functions at volume points
        self.vol = self._trial(np.arange(ctx.mesh.n_elements), disc.xq, ctx.V)
        nbr = np.where(mesh.face_neighbor >= 0, mesh.face_neighbor, mesh.face_owner)
        self.face = [self._trial(mesh.face_owner, disc.fx, ctx.FV[0]),
                     self._trial(nbr, disc.fx, ctx.FV[1])]
        self.face[1][mesh.boundary_flags] = 0.0
        self.ntrial = self.vol.shape[2]
        self._build_matrix()

    def _xt(self, elems, x):
        return (x - self.center[elems][:, None, :]) / self.hk[elems][:, None, None]

    def _trial(self, elems, x, pk_vec):
        xt = self._xt(elems, x)
        h = eval_monomials(xt.reshape(-1, 3), self.hexp).reshape(xt.shape[:2] + (len(self.hexp),))
        top = h[..., None] * xt[:, :, None, :]
        return np.concatenate([pk_vec, top], axis=2)

    def _trial_div(self):
        ctx = self.ctx
        k = ctx.k
        xt = self._xt(np.arange(ctx.mesh.n_elements), ctx.disc.xq)
        h = eval_monomials(xt.reshape(-1, 3), self.hexp).reshape(xt.shape[:2] + (len(self.hexp),))
        top = (3 + k) * h / self.hk[:, None, None]
        return np.concatenate([ctx.div, top], axis=2)

    def _build_matrix(self):
        ctx = self.ctx
        disc = ctx.disc
        mesh = ctx.mesh
        k = ctx.k
        ne = mesh.n_elements
        # face rows: <P.n_K, lambda>_F
        fb = disc.face_basis(k)                            # (nf, nqf, nF)
        ef = mesh.elem_faces
        side = disc.elem_face_side
        tr = np.stack(self.face)                           # (2, nf, nqf, nt, 3)
        tr_ef = tr[side, ef]                               # (ne, 4, nqf, nt, 3)
        nK = disc.elem_face_normals                        # (ne, 4, 3)
        w = disc.fw[ef]                                    # (ne, 4, nqf)
        lam = fb[ef]                                       # (ne, 4, nqf, nF)
        self._face_test = w[..., None] * lam               # weights folded in
        rows_face = np.einsum("eflm,eflta,efa->efmt", self._face_test, tr_ef, nK)
        rows_face = rows_face.reshape(ne, -1, self.ntrial)
        # interior rows
        test = self._interior_test()
        self._int_test = test
        rows_int = np.einsum("eq,eqma,eqta->emt", disc.wq, test, self.vol)
        blocks = [rows_face, rows_int]
        if self.variant == "bdm":
            xt = self._xt(np.arange(ne), disc.xq)
            q = eval_monomials(xt.reshape(-1, 3), self.hexp).reshape(xt.shape[:2] + (len(self.hexp),))
            self._div_test = q
            blocks.append(np.einsum("eq,eqm,eqt->emt", disc.wq, q, self._trial_div()))
        mat = np.concatenate(blocks, axis=1)
        assert mat.shape[1] == mat.shape[2], mat.shape
        self.lu = [scipy.linalg.lu_factor(m) for m in mat]
        self.matrix = mat

    def _interior_test(self):
        ctx = self.ctx
        k = ctx.k
        ne = ctx.mesh.n_elements
        if self.variant == "rt":
            nb1 = poly_dim(k - 1)
            vals = ctx.tk.vals[:, :, :nb1]                 # hierarchical prefix spans P_{k-1}
            out = np.zeros(vals.shape[:2] + (3 * nb1, 3))
            for c in range(3):
                out[:, :, c * nb1:(c + 1) * nb1, c] = vals
            return out
        spec = nedelec_interior_spec(k)
        xt = self._xt(np.arange(ne), ctx.disc.xq)
        return _nd_eval(xt.reshape(-1, 3), spec).reshape(xt.shape[:2] + (len(spec), 3))

    def lift(self, u_coeffs):
        """Lift V_h coefficients.

        On boundary faces the normal moments come from the homogeneous
        Dirichlet datum (``boundary='dirichlet'``) or from the interior trace
        (``boundary='inner'``).
        """
        ctx = self.ctx
        disc = ctx.disc
        mesh = ctx.mesh
        ne = mesh.n_elements
        u = np.asarray(u_coeffs).reshape(ne, -1)
        tr = FieldTraces.from_coeffs(ctx, u)
        avg = 0.5 * (tr.face[0] + tr.face[1])
        bd = mesh.boundary_flags
        avg[bd] = 0.0 if self.boundary == "dirichlet" else tr.face[0][bd]
        ef = mesh.elem_faces
        rhs_face = np.einsum("eflm,efla,efa->efm", self._face_test, avg[ef],
                             disc.elem_face_normals).reshape(ne, -1)
        rhs_int = np.einsum("eq,eqma,eqa->em", disc.wq, self._int_test, tr.vol)
        rhs = [rhs_face, rhs_int]
        if self.variant == "bdm":
            rhs.append(np.zeros((ne, len(self.hexp))))
        rhs = np.concatenate(rhs, axis=1)
        coeffs = np.stack([scipy.linalg.lu_solve(f, b) for f, b in zip(self.lu, rhs)])
        return LiftedField(coeffs, ctx.nb, self.traces(coeffs), self.variant)

    def traces(self, coeffs):
        vol = np.einsum("eqta,et->eqa", self.vol, coeffs)
        mesh = self.ctx.mesh
        nbr = np.where(mesh.face_neighbor >= 0, mesh.face_neighbor, mesh.face_owner)
        own = np.einsum("fqta,ft->fqa", self.face[0], coeffs[mesh.face_owner])
        oth = np.einsum("fqta,ft->fqa", self.face[1], coeffs[nbr])
        return FieldTraces(vol, np.stack([own, oth]))

    def top_fraction(self, lifted):
        """||top-degree part||_L2 / ||P||_L2 over the mesh."""
        w = self.ctx.disc.wq
        nb3 = 3 * self.ctx.nb
        top = np.einsum("eqta,et->eqa", self.vol[:, :, nb3:], lifted.coeffs[:, nb3:])
        num = np.einsum("eq,eqa,eqa->", w, top, top)
        den = np.einsum("eq,eqa,eqa->", w, lifted.traces.vol, lifted.traces.vol)
        return float(np.sqrt(num / max(den, 1e-300)))

    def divergence_moments(self, lifted):
        """L2 moments of div P against the P_k modal basis, per element (ne, nb)."""
        ctx = self.ctx
        div = np.einsum("eqt,et->eq", self._trial_div(), lifted.coeffs)
        return np.einsum("eq,eqb,eq->eb", ctx.disc.wq, ctx.tk.vals, div)


def postprocess_P(ctx, u_coeffs, variant="bdm", boundary="dirichlet"):
    """Lift a V_h field to an H(div)-conforming field (see module docstring)."""
    return Lifter(ctx, variant, boundary).lift(u_coeffs)
