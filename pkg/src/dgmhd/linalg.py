"""Sparse assembly buffers, direct LU solves and a smallest-eigenvalue estimator.

Storage and factorization are delegated to scipy.sparse and SuperLU.
"""
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SingularMatrixError(RuntimeError):
    """Numerically singular pivot during factorization."""

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class ConvergenceError(RuntimeError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class TripletBuffer:
    """Accumulates (row, col, value) contributions, possibly repeated."""

    def __init__(self):
        self._rows, self._cols, self._vals = [], [], []

    def add(self, rows, cols, vals):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=float).ravel()
        if not (len(rows) == len(cols) == len(vals)):
            raise ValueError("rows, cols and vals must have equal length")
        self._rows.append(rows)
        self._cols.append(cols)
        self._vals.append(vals)

    def add_block(self, row_dofs, col_dofs, blocks):
        """Scatter dense blocks (m, r, c) with dof maps (m, r) and (m, c)."""
        row_dofs = np.asarray(row_dofs)
        col_dofs = np.asarray(col_dofs)
        r = np.broadcast_to(row_dofs[:, :, None], blocks.shape)
        c = np.broadcast_to(col_dofs[:, None, :], blocks.shape)
        self.add(r, c, blocks)

    def arrays(self):
        if not self._rows:
            z = np.zeros(0, dtype=np.int64)
            return z, z, np.zeros(0)
        return (np.concatenate(self._rows), np.concatenate(self._cols),
                np.concatenate(self._vals))

    def __len__(self):
        return sum(len(r) for r in self._rows)


def to_csr(buffer, nrows, ncols):
    """Convert to CSR with duplicates summed and column indices sorted."""
    if isinstance(buffer, TripletBuffer):
        rows, cols, vals = buffer.arrays()
    else:
        trip = list(buffer)
        rows = np.array([t[0] for t in trip], dtype=np.int64)
        cols = np.array([t[1] for t in trip], dtype=np.int64)
        vals = np.array([t[2] for t in trip], dtype=float)
    if len(rows) and (rows.min() < 0 or rows.max() >= nrows or cols.min() < 0 or cols.max() >= ncols):
        bad = np.flatnonzero((rows < 0) | (rows >= nrows) | (cols < 0) | (cols >= ncols))[0]
        raise IndexError(f"triplet ({rows[bad]}, {cols[bad]}) out of range for shape ({nrows}, {ncols})")
    # a stable sort by (row, col) makes the summation order independent of input order
    order = np.lexsort((vals, cols, rows))
    A = sp.csr_matrix((vals[order], (rows[order], cols[order])), shape=(nrows, ncols))
    A.sum_duplicates()
    A.sort_indices()
    return A


@dataclass
class DirectFactorization:
    lu: object
    shape: tuple
    ordering: str

    @property
    def perm_r(self):
        return self.lu.perm_r

    @property
    def perm_c(self):
        return self.lu.perm_c


def _dense_pivot(A):
    # locate the first vanishing pivot of a dense LU for the error report
    _, _, U = scipy.linalg.lu(A.toarray())
    d = np.abs(np.diag(U))
    scale = max(d.max(), 1e-300)
    bad = np.flatnonzero(d <= 1e-13 * scale)
    return int(bad[0]) if len(bad) else None


def factorize(A, ordering="MMD_ATA", pivot_tol=1e-13):
    """Sparse LU with partial pivoting and a minimum-degree column ordering.

    ``MMD_ATA`` (minimum degree on A^T A) is the default: on the coupled DG
    systems it gives roughly half the fill of ``MMD_AT_PLUS_A``.
    """
    A = sp.csc_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got {A.shape}")
    try:
        lu = spla.splu(A, permc_spec=ordering, options={"SymmetricMode": False})
    except RuntimeError as exc:
        piv = _dense_pivot(A) if A.shape[0] <= 4000 else None
        raise SingularMatrixError(f"singular matrix ({exc}); pivot index {piv}", piv) from None
    d = np.abs(lu.U.diagonal())
    if len(d) and d.min() <= pivot_tol * d.max():
        piv = int(np.argmin(d))
        raise SingularMatrixError(
            f"numerically singular pivot {d[piv]:.3e} at index {piv}", piv)
    return DirectFactorization(lu, A.shape, ordering)


def solve(F, rhs):
    return F.lu.solve(np.asarray(rhs, dtype=float))


def solve_system(A, rhs):
    return solve(factorize(A), rhs)


def residual_ok(A, x, rhs, tol=1e-9):
    r = np.linalg.norm(A @ x - rhs)
    return r <= tol * (spla.norm(A) * np.linalg.norm(x) + np.linalg.norm(rhs))


def _gershgorin_lower(A):
    A = sp.csr_matrix(A)
    diag = A.diagonal()
    off = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(diag)
    return float(np.min(diag - off)), float(np.max(diag + off))


def smallest_eigenvalue_spd(A, tol=1e-10, max_iter=5000, seed=0):
    """Smallest eigenvalue of a symmetric matrix by shifted inverse iteration.

    The shift is placed below the Gershgorin lower bound, so the iteration
    targets the algebraically smallest eigenvalue even for indefinite input.
    A few Rayleigh-quotient steps sharpen the final estimate.
    """
    A = sp.csc_matrix(A, dtype=float)
    n = A.shape[0]
    lo, hi = _gershgorin_lower(A)
    span = max(hi - lo, abs(hi), 1e-300)
    sigma = lo - 1e-3 * span
    I = sp.identity(n, format="csc")
    F = factorize(A - sigma * I)
    x = np.random.default_rng(seed).standard_normal(n)
    x /= np.linalg.norm(x)
    lam = x @ (A @ x)
    history = []
    for it in range(max_iter):
        y = solve(F, x)
        x = y / np.linalg.norm(y)
        new = x @ (A @ x)
        history.append(new)
        if abs(new - lam) <= 0.1 * tol * max(abs(new), 1e-300) and it > 2:
            lam = new
            break
        lam = new
    else:
        raise ConvergenceError("inverse iteration did not converge", history)
    # Rayleigh quotient refinement from the converged direction
    for _ in range(3):
        res = np.linalg.norm(A @ x - lam * x)
        if res <= tol * max(abs(lam), 1e-300):
            break
        try:
            y = solve(factorize(A - (lam - 1e-12 * span) * I), x)
        except SingularMatrixError:
            break
        x = y / np.linalg.norm(y)
        lam = x @ (A @ x)
    return float(lam)


def dump_matrix_market(A, path):
    scipy.io.mmwrite(path, sp.coo_matrix(A))
