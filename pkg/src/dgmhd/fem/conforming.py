"""Continuous Lagrange spaces embedded into the broken modal spaces."""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis import lattice_nodes, make_scalar_basis


@dataclass(frozen=True)
class ConformingSpace:
    """Continuous piecewise P_m space on a tetrahedral mesh.

    ``extension`` maps global nodal values to broken modal coefficients
    (element-major), so ``extension @ values`` is the same function written
    in the discontinuous basis.
    """

    degree: int
    nodes: np.ndarray
    elem_nodes: np.ndarray
    extension: sp.csr_matrix
    boundary: np.ndarray

    @property
    def dim(self):
        return len(self.nodes)

    @property
    def interior(self):
        return np.flatnonzero(~self.boundary)


def conforming_space(disc, m):
    """Build the continuous P_m space and its extension into the broken P_m space."""
    mesh = disc.mesh
    ref = lattice_nodes("tet", m)
    phys = np.einsum("eij,nj->eni", disc.J, ref) + mesh.vertices[mesh.tets[:, 0]][:, None, :]
    scale = max(np.ptp(mesh.vertices, axis=0).max(), 1.0)
    key = np.round(phys.reshape(-1, 3) / scale * 1e9).astype(np.int64)
    _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inv = inv.reshape(-1)
    nodes = phys.reshape(-1, 3)[first]
    elem_nodes = inv.reshape(mesh.n_elements, len(ref))
    nodal = make_scalar_basis(m, "nodal", "tet").values(disc.vol_rule.points)   # (nq, nn)
    tab = disc.scalar(m)
    # modal coefficients of each nodal function: (phi_i, N_a)_K
    T = np.einsum("eq,eqi,qa->eia", disc.wq, tab.vals, nodal)
    ne, nb, nn = T.shape
    rows = np.broadcast_to((np.arange(ne)[:, None] * nb + np.arange(nb))[:, :, None], T.shape)
    cols = np.broadcast_to(elem_nodes[:, None, :], T.shape)
    E = sp.csr_matrix((T.ravel(), (rows.ravel(), cols.ravel())), shape=(ne * nb, len(nodes)))
    E.eliminate_zeros()
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    tol = 1e-10 * scale
    bd = np.any((np.abs(nodes - lo) < tol) | (np.abs(nodes - hi) < tol), axis=1)
    return ConformingSpace(m, nodes, elem_nodes, E, bd)


def gradient_matrix(disc, space):
    """Broken vector P_{m-1} coefficients of grad(s) for conforming s (ne*3*nb x dim).

    The gradient of a P_m function lies in P_{m-1}, so the L2 projection onto
    the broken vector P_{m-1} space reproduces it exactly.
    """
    m = space.degree
    src = disc.scalar(m)
    tgt = disc.scalar(m - 1)
    # (psi_i, d_c phi_j)_K for the modal bases
    G = np.einsum("eq,eqi,eqjc->ecij", disc.wq, tgt.vals, src.grads)
    ne, _, nbt, nbs = G.shape
    blocks = sp.block_diag([G[e].reshape(3 * nbt, nbs) for e in range(ne)], format="csr")
    return blocks @ space.extension


def stiffness(disc, space):
    """Conforming stiffness matrix (grad s, grad t)."""
    tab = disc.scalar(space.degree)
    Ke = np.einsum("eq,eqic,eqjc->eij", disc.wq, tab.grads, tab.grads)
    ne, nb, _ = Ke.shape
    Kb = sp.block_diag(list(Ke), format="csr")
    E = space.extension
    return (E.T @ Kb @ E).tocsr()
