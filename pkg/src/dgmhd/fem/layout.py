"""Degree-of-freedom layouts for the broken and trace spaces."""
from dataclasses import dataclass, field

import numpy as np

from .basis import poly_dim


@dataclass(frozen=True)
class SpaceLayout:
    """One discrete space: global dimension and its local->global map.

    ``dofmap`` has one row per element (broken spaces), per interior face
    (trace spaces) or per element-face pair (double-valued spaces).
    """

    name: str
    dim: int
    local_dim: int
    dofmap: np.ndarray
    blocks: str = "element"


@dataclass(frozen=True)
class DofLayout:
    k: int
    scheme: str
    bc_type: int
    spaces: dict
    mean_constraints: tuple = field(default_factory=tuple)

    def __getitem__(self, name):
        return self.spaces[name]

    def dim(self, name):
        return self.spaces[name].dim


def _broken(name, ne, ldim):
    return SpaceLayout(name, ne * ldim, ldim, np.arange(ne * ldim).reshape(ne, ldim))


def build_dof_layout(mesh, k, scheme="dg", bc_type=1):
    """Layouts of V_h, Q_h, C_h, S_h and, for HDG, the extra and trace spaces.

    Vector spaces are component-major within an element: local index
    ``c * dim P_k + i``.  Trace spaces only carry interior faces because all
    of them vanish on the boundary.
    """
    if int(k) != k or k < 1:
        raise ValueError(f"polynomial degree must satisfy k >= 1, got {k}")
    if scheme not in ("dg", "hdg"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if bc_type not in (1, 2):
        raise ValueError(f"bc_type must be 1 or 2, got {bc_type}")
    if scheme == "hdg" and bc_type != 1:
        raise ValueError("the HDG scheme supports only bc_type 1")
    ne = mesh.n_elements
    nk, nk1, nk2 = poly_dim(k), poly_dim(k - 1), poly_dim(k + 1)
    spaces = {
        "V": _broken("V", ne, 3 * nk),
        "Q": _broken("Q", ne, nk1),
        "C": _broken("C", ne, 3 * nk),
        "S": _broken("S", ne, nk2),
    }
    means = ["Q"] + (["S"] if bc_type == 2 else [])
    if scheme == "hdg":
        nF, nF2 = poly_dim(k, 2), poly_dim(k + 1, 2)
        nI = len(mesh.interior_faces)
        spaces["G"] = _broken("G", ne, 9 * nk)
        spaces["W"] = _broken("W", ne, 3 * nk)
        spaces["Qperp"] = _broken("Qperp", ne, nk1 - 1)
        lam = np.arange(ne * 4 * nF).reshape(ne, 4 * nF)
        spaces["Lambda"] = SpaceLayout("Lambda", ne * 4 * nF, 4 * nF, lam, "element-face")
        spaces["M"] = SpaceLayout("M", nI * 3 * nF, 3 * nF,
                                  np.arange(nI * 3 * nF).reshape(nI, 3 * nF), "face")
        spaces["MT"] = SpaceLayout("MT", nI * 2 * nF, 2 * nF,
                                   np.arange(nI * 2 * nF).reshape(nI, 2 * nF), "face")
        spaces["N"] = SpaceLayout("N", nI * nF2, nF2, np.arange(nI * nF2).reshape(nI, nF2), "face")
        spaces["Qbar"] = _broken("Qbar", ne, 1)
        means = ["Qbar"]
    return DofLayout(int(k), scheme, int(bc_type), spaces, tuple(means))


def interior_face_index(mesh):
    """Map global face id -> position among interior faces (-1 on the boundary)."""
    idx = np.full(mesh.n_faces, -1, dtype=np.int64)
    idx[mesh.interior_faces] = np.arange(len(mesh.interior_faces))
    return idx
