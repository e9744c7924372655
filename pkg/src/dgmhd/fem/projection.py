"""L2 projection onto broken polynomial spaces."""
import numpy as np


def l2_project(disc, field, degree, ncomp=1):
    """Project onto the broken P_degree space (scalar or ``ncomp``-vector).

    ``field`` is either a callable on physical points (n, 3) returning (n,) or
    (n, ncomp), or coefficient array of another broken space given as a
    tuple ``(coeffs, source_degree)``.  Returned coefficients are element-major
    and component-major, matching the layouts.
    """
    tab = disc.scalar(degree)
    ne, nq = disc.xq.shape[:2]
    if callable(field):
        vals = np.asarray(field(disc.xq.reshape(-1, 3)), dtype=float).reshape(ne, nq, -1)
    else:
        coeffs, src = field
        st = disc.scalar(src)
        c = np.asarray(coeffs, dtype=float).reshape(ne, ncomp, st.nb)
        vals = np.einsum("eqb,ecb->eqc", st.vals, c)
    if vals.shape[-1] != ncomp:
        raise ValueError(f"field has {vals.shape[-1]} components, expected {ncomp}")
    # identity mass matrix: coefficients are the moments
    out = np.einsum("eq,eqb,eqc->ecb", disc.wq, tab.vals, vals)
    return out.reshape(-1)


def evaluate(disc, coeffs, degree, ncomp=1):
    """Values of a broken field at volume quadrature points (ne, nq, ncomp)."""
    tab = disc.scalar(degree)
    c = np.asarray(coeffs).reshape(disc.ne, ncomp, tab.nb)
    return np.einsum("eqb,ecb->eqc", tab.vals, c)


def evaluate_grad(disc, coeffs, degree, ncomp=1):
    """Gradients at volume points (ne, nq, ncomp, 3)."""
    tab = disc.scalar(degree)
    c = np.asarray(coeffs).reshape(disc.ne, ncomp, tab.nb)
    return np.einsum("eqbd,ecb->eqcd", tab.grads, c)


def evaluate_faces(disc, coeffs, degree, ncomp=1):
    """Traces on both sides of every face (2, nf, nqf, ncomp); neighbor is 0 on the boundary."""
    tab = disc.scalar(degree)
    mesh = disc.mesh
    c = np.asarray(coeffs).reshape(disc.ne, ncomp, tab.nb)
    nbr = np.where(mesh.face_neighbor >= 0, mesh.face_neighbor, mesh.face_owner)
    own = np.einsum("fqb,fcb->fqc", tab.face_vals[0], c[mesh.face_owner])
    oth = np.einsum("fqb,fcb->fqc", tab.face_vals[1], c[nbr])
    return np.stack([own, oth])


def evaluate_face_grads(disc, coeffs, degree, ncomp=1):
    tab = disc.scalar(degree)
    mesh = disc.mesh
    c = np.asarray(coeffs).reshape(disc.ne, ncomp, tab.nb)
    nbr = np.where(mesh.face_neighbor >= 0, mesh.face_neighbor, mesh.face_owner)
    own = np.einsum("fqbd,fcb->fqcd", tab.face_grads[0], c[mesh.face_owner])
    oth = np.einsum("fqbd,fcb->fqcd", tab.face_grads[1], c[nbr])
    return np.stack([own, oth])
