"""Collapsed Gauss-Jacobi quadrature on the reference triangle and tetrahedron.

Reference triangle: vertices (0,0), (1,0), (0,1), measure 1/2.
Reference tetrahedron: vertices (0,0,0), (1,0,0), (0,1,0), (0,0,1), measure 1/6.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

MAX_DEGREE = 30


@dataclass(frozen=True)
class QuadratureRule:
    """Points in reference coordinates, weights w.r.t. the reference measure."""

    shape: str
    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def npoints(self):
        return len(self.weights)


def _jacobi01(n, alpha):
    # Gauss-Jacobi nodes on [0, 1] for the weight (1 - t)^alpha
    s, w = roots_jacobi(n, alpha, 0.0)
    return 0.5 * (1.0 + s), w / 2.0 ** (alpha + 1)


@lru_cache(maxsize=None)
def make_quadrature(shape, d):
    """Return a rule on ``shape`` ('tet' or 'tri') exact for total degree ``d``.

    The rule is the Duffy-collapsed tensor product of Gauss-Jacobi rules,
    with ``ceil((d + 1) / 2)`` points per direction.
    """
    if shape not in ("tet", "tri"):
        raise ValueError(f"unsupported shape {shape!r}")
    d = int(d)
    if d < 0 or d > MAX_DEGREE:
        raise ValueError(f"unsupported quadrature degree {d} (0 <= d <= {MAX_DEGREE})")
    n = max(1, (d + 2) // 2)
    if shape == "tri":
        t1, w1 = _jacobi01(n, 1.0)
        t2, w2 = _jacobi01(n, 0.0)
        a, b = np.meshgrid(t1, t2, indexing="ij")
        x = a
        y = (1.0 - a) * b
        pts = np.stack([x.ravel(), y.ravel()], axis=1)
        wts = np.outer(w1, w2).ravel()
    else:
        t1, w1 = _jacobi01(n, 2.0)
        t2, w2 = _jacobi01(n, 1.0)
        t3, w3 = _jacobi01(n, 0.0)
        a, b, c = np.meshgrid(t1, t2, t3, indexing="ij")
        x = a
        y = (1.0 - a) * b
        z = (1.0 - a) * (1.0 - b) * c
        pts = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
        wts = np.einsum("i,j,k->ijk", w1, w2, w3).ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(shape, pts, wts, d)
