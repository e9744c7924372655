"""Per-mesh geometric factors and tabulated bases at quadrature points.

Modal functions are scaled by ``|det J_K|^{-1/2}`` so that every broken
P_m space has an identity mass matrix on each element.
"""
from functools import cached_property, lru_cache

import numpy as np

from ..mesh import face_trace_frames
from .basis import make_scalar_basis
from .quadrature import make_quadrature


def default_quad_degree(k):
    return 3 * k + 2


class ScalarTables:
    """Values and physical gradients of a scaled orthonormal P_m basis."""

    def __init__(self, disc, m):
        mesh = disc.mesh
        basis = make_scalar_basis(m, "orthonormal", "tet")
        self.degree = m
        self.nb = basis.dim
        s = disc.scale[:, None, None]
        ref = disc.vol_rule.points
        self.vals = basis.values(ref)[None, :, :] * s                      # (ne, nq, nb)
        g = basis.grads(ref)                                               # (nq, nb, 3)
        self.grads = np.einsum("qbd,edi->eqbi", g, disc.Jinv) * s[..., None]
        fr = disc.frames
        own = mesh.face_owner
        so = disc.scale[own][:, None, None]
        shp = fr.owner_xi.shape[:2]
        self.face_vals = np.empty((2,) + shp + (self.nb,))
        self.face_grads = np.zeros((2,) + shp + (self.nb, 3))
        xi = fr.owner_xi.reshape(-1, 3)
        self.face_vals[0] = basis.values(xi).reshape(shp + (self.nb,)) * so
        self.face_grads[0] = np.einsum("fqbd,fdi->fqbi",
                                       basis.grads(xi).reshape(shp + (self.nb, 3)),
                                       disc.Jinv[own]) * so[..., None]
        nbr = np.where(mesh.face_neighbor >= 0, mesh.face_neighbor, own)
        sn = disc.scale[nbr][:, None, None]
        xi = np.nan_to_num(fr.neighbor_xi).reshape(-1, 3)
        self.face_vals[1] = basis.values(xi).reshape(shp + (self.nb,)) * sn
        self.face_grads[1] = np.einsum("fqbd,fdi->fqbi",
                                       basis.grads(xi).reshape(shp + (self.nb, 3)),
                                       disc.Jinv[nbr]) * sn[..., None]
        bd = mesh.boundary_flags
        self.face_vals[1, bd] = 0.0
        self.face_grads[1, bd] = 0.0

    def elem_face(self, disc):
        """Traces on each element's own four faces: values (ne,4,nqf,nb), grads (ne,4,nqf,nb,3)."""
        side = disc.elem_face_side
        f = disc.mesh.elem_faces
        return self.face_vals[side, f], self.face_grads[side, f]


class Discretization:
    """Geometry and quadrature for one mesh and one polynomial degree k."""

    def __init__(self, mesh, k, quad_degree=None):
        if int(k) != k or k < 1:
            raise ValueError(f"polynomial degree must satisfy k >= 1, got {k}")
        self.mesh = mesh
        self.k = int(k)
        self.quad_degree = default_quad_degree(self.k) if quad_degree is None else int(quad_degree)
        self.vol_rule = make_quadrature("tet", self.quad_degree)
        self.J = mesh.jacobians()
        self.Jinv = np.linalg.inv(self.J)
        self.detJ = np.abs(np.linalg.det(self.J))
        self.scale = 1.0 / np.sqrt(self.detJ)
        v0 = mesh.vertices[mesh.tets[:, 0]]
        self.xq = np.einsum("eij,qj->eqi", self.J, self.vol_rule.points) + v0[:, None, :]
        self.wq = self.detJ[:, None] * self.vol_rule.weights[None, :]
        self.frames = face_trace_frames(mesh, self.quad_degree)
        self.fx = self.frames.points
        self.fw = self.frames.weights
        self.normals = mesh.normals
        self.hF = mesh.h_F
        self._tables = {}

    @property
    def ne(self):
        return self.mesh.n_elements

    def scalar(self, m):
        if m not in self._tables:
            self._tables[m] = ScalarTables(self, m)
        return self._tables[m]

    @cached_property
    def elem_face_side(self):
        """0 where the element owns its local face, 1 where it is the neighbor."""
        mesh = self.mesh
        return (mesh.face_owner[mesh.elem_faces] != np.arange(self.ne)[:, None]).astype(int)

    @cached_property
    def elem_face_normals(self):
        sign = 1.0 - 2.0 * self.elem_face_side
        return self.mesh.normals[self.mesh.elem_faces] * sign[..., None]

    @cached_property
    def elem_face_weights(self):
        return self.fw[self.mesh.elem_faces]

    @cached_property
    def elem_face_points(self):
        return self.fx[self.mesh.elem_faces]

    @lru_cache(maxsize=None)
    def face_basis(self, m):
        """Orthonormal P_m(F) basis on every face, values (nf, nqf, nbF).

        Every face uses its own sorted-vertex parametrization, so both
        incident elements see the same functions at the same points.
        """
        b = make_scalar_basis(m, "orthonormal", "tri")
        vals = b.values(self.frames.ref_points)
        return vals[None, :, :] / np.sqrt(2.0 * self.mesh.face_areas)[:, None, None]

    def face_sides(self):
        """Side sign (+1 owner, -1 neighbor) and average weight per face and side."""
        bd = self.mesh.boundary_flags
        avg = np.where(bd[None, :], np.array([[1.0], [0.0]]), 0.5)
        sign = np.array([1.0, -1.0])[:, None] * np.ones((1, len(bd)))
        sign[1, bd] = 0.0
        return sign, avg

    def integrate(self, values):
        """Integral over the domain of values sampled at volume points (ne, nq, ...)."""
        return np.einsum("eq,eq...->...", self.wq, values)


def vec_values(vals):
    """Scalar basis (..., nb) -> vector basis values (..., 3nb, 3), component-major."""
    nb = vals.shape[-1]
    out = np.zeros(vals.shape[:-1] + (3 * nb, 3))
    for c in range(3):
        out[..., c * nb:(c + 1) * nb, c] = vals
    return out


def vec_grads(grads):
    """Scalar gradients (..., nb, 3) -> vector gradients (..., 3nb, 3, 3); [i, c, d] = d_d v_c."""
    nb = grads.shape[-2]
    out = np.zeros(grads.shape[:-2] + (3 * nb, 3, 3))
    for c in range(3):
        out[..., c * nb:(c + 1) * nb, c, :] = grads
    return out


def curl_from_grads(g):
    """Curl from a gradient array (..., 3, 3) with g[..., c, d] = d_d v_c."""
    return np.stack([g[..., 2, 1] - g[..., 1, 2],
                     g[..., 0, 2] - g[..., 2, 0],
                     g[..., 1, 0] - g[..., 0, 1]], axis=-1)


def div_from_grads(g):
    return g[..., 0, 0] + g[..., 1, 1] + g[..., 2, 2]


def cross_n(v, n):
    """n x v with broadcasting over leading axes."""
    return np.cross(np.broadcast_to(n, v.shape), v)
