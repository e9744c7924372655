"""Polynomial bases on the reference triangle and tetrahedron.

The orthonormal family is hierarchical: the first ``dim P_m`` functions of a
degree-k basis span P_m for every m <= k, and the first function is the
constant.  The nodal family is the Lagrange basis on the equispaced lattice.
"""
from dataclasses import dataclass
from functools import lru_cache
from itertools import product
from math import comb

import numpy as np

from .quadrature import make_quadrature

MAX_BASIS_DEGREE = 5

_CENTROID = {"tet": np.full(3, 0.25), "tri": np.full(2, 1.0 / 3.0)}


def poly_dim(k, dim=3):
    """Dimension of P_k in ``dim`` variables (0 for k < 0)."""
    return comb(k + dim, dim) if k >= 0 else 0


def graded_exponents(k, dim):
    """Monomial exponents of total degree <= k, ordered by total degree."""
    out = []
    for deg in range(k + 1):
        for e in product(range(deg + 1), repeat=dim):
            if sum(e) == deg:
                out.append(e)
    # within one degree, keep a fixed lexicographic order (descending x power)
    out.sort(key=lambda e: (sum(e), tuple(-x for x in e)))
    return np.array(out, dtype=int).reshape(-1, dim)


def homogeneous_exponents(k, dim):
    exps = graded_exponents(k, dim)
    return exps[exps.sum(axis=1) == k]


def eval_monomials(points, exps):
    """Values of x^e at ``points`` (n, dim) -> (n, len(exps))."""
    pts = np.asarray(points, dtype=float)
    out = np.ones((pts.shape[0], len(exps)))
    for d in range(pts.shape[1]):
        out *= pts[:, d:d + 1] ** exps[None, :, d]
    return out


def eval_monomial_grads(points, exps):
    """Gradients of x^e at ``points`` -> (n, len(exps), dim)."""
    pts = np.asarray(points, dtype=float)
    n, dim = pts.shape
    out = np.empty((n, len(exps), dim))
    for d in range(dim):
        e = exps.copy()
        coef = e[:, d].astype(float)
        e[:, d] = np.maximum(e[:, d] - 1, 0)
        out[:, :, d] = coef[None, :] * eval_monomials(pts, e)
    return out


@dataclass(frozen=True)
class ScalarBasis:
    """A polynomial basis on a reference simplex.

    Evaluation is ``values(points) @`` coefficients of shifted monomials.
    """

    shape: str
    degree: int
    family: str
    exps: np.ndarray
    coeffs: np.ndarray

    @property
    def dim(self):
        return self.coeffs.shape[1]

    @property
    def ref_dim(self):
        return 3 if self.shape == "tet" else 2

    def values(self, points):
        pts = np.asarray(points, dtype=float) - _CENTROID[self.shape]
        return eval_monomials(pts, self.exps) @ self.coeffs

    def grads(self, points):
        """Reference gradients, shape (npts, dim, ref_dim)."""
        pts = np.asarray(points, dtype=float) - _CENTROID[self.shape]
        g = eval_monomial_grads(pts, self.exps)
        return np.einsum("pmd,mb->pbd", g, self.coeffs)


def lattice_nodes(shape, k):
    """Equispaced lattice of degree k (vertices first for k >= 1)."""
    dim = 3 if shape == "tet" else 2
    if k == 0:
        return _CENTROID[shape][None, :].copy()
    verts = np.vstack([np.zeros(dim), np.eye(dim)])
    nodes = [tuple(v) for v in verts]
    rest = []
    for e in graded_exponents(k, dim):
        p = tuple(e / k)
        if p not in nodes:
            rest.append(p)
    return np.array(nodes + rest)


def _orthonormal_coeffs(shape, k):
    dim = 3 if shape == "tet" else 2
    exps = graded_exponents(k, dim)
    rule = make_quadrature(shape, 2 * k)
    m = eval_monomials(rule.points - _CENTROID[shape], exps)
    gram = m.T @ (rule.weights[:, None] * m)
    # two Cholesky passes restore orthonormality lost to conditioning
    c = np.linalg.inv(np.linalg.cholesky(gram)).T
    g2 = c.T @ gram @ c
    c = c @ np.linalg.inv(np.linalg.cholesky(g2)).T
    return exps, c


@lru_cache(maxsize=None)
def make_scalar_basis(k, family="orthonormal", shape="tet"):
    """Scalar P_k basis on the reference ``shape``.

    ``family`` is 'orthonormal' (L2-orthonormal on the reference simplex) or
    'nodal' (Lagrange on the equispaced lattice).
    """
    if not (0 <= int(k) <= MAX_BASIS_DEGREE) or int(k) != k:
        raise ValueError(f"unsupported polynomial degree k={k}")
    if family not in ("orthonormal", "nodal"):
        raise ValueError(f"unknown basis family {family!r}")
    if shape not in ("tet", "tri"):
        raise ValueError(f"unsupported shape {shape!r}")
    k = int(k)
    exps, c = _orthonormal_coeffs(shape, k)
    if family == "nodal":
        nodes = lattice_nodes(shape, k)
        vand = eval_monomials(nodes - _CENTROID[shape], exps) @ c
        c = c @ np.linalg.inv(vand)
    c.setflags(write=False)
    return ScalarBasis(shape, k, family, exps, c)
