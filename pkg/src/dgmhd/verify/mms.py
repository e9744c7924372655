"""Manufactured solutions with forcings derived by forward-mode differentiation."""
from dataclasses import dataclass

import numpy as np

from . import dual
from .dual import derivatives

PI = np.pi

# u_i = sum_{j,k} eps_ijk d_j psi  for the potential (psi, psi, psi)
_CU = np.array([[0.0, 1.0, -1.0], [-1.0, 0.0, 1.0], [1.0, -1.0, 0.0]])
# b = curl(0, 0, w): b_i = eps_ij2 d_j w
_CB = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
_EPS = np.zeros((3, 3, 3))
for _i, _j, _k in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
    _EPS[_i, _j, _k] = 1.0
    _EPS[_i, _k, _j] = -1.0


def _psi(x, y, z):
    q = x * (1.0 - x) * y * (1.0 - y) * z * (1.0 - z)
    return q * q


def _w_type1(x, y, z):
    sx, sy = dual.sin(PI * x), dual.sin(PI * y)
    return sx * sx * sy * sy * dual.sin(PI * z)


def _w_type2(x, y, z):
    return dual.sin(PI * x) * dual.sin(PI * y) * dual.cos(PI * z)


def _r_type1(x, y, z):
    return dual.sin(PI * x) * dual.sin(PI * y) * dual.sin(PI * z)


def _r_type2(x, y, z):
    return dual.cos(PI * x) * dual.cos(PI * y) * dual.cos(PI * z)


def _p_shape(x, y, z):
    return dual.cos(PI * x) * dual.cos(PI * y)


@dataclass
class MmsCase:
    """Exact (u, p, b, r) and the forcings (f, g) that make them a solution.

    ``scale`` multiplies every exact field; ``pressure_amplitude`` further
    multiplies p.  Physical parameters enter only the forcings.
    """

    bc_type: int = 1
    pressure_amplitude: float = 1.0
    scale: float = 0.1
    nu: float = 1.0
    nu_m: float = 1.0
    kappa: float = 1.0
    zero: bool = False

    def __post_init__(self):
        if self.bc_type not in (1, 2):
            raise ValueError(f"bc_type must be 1 or 2, got {self.bc_type}")
        self._w = _w_type1 if self.bc_type == 1 else _w_type2
        self._r = _r_type1 if self.bc_type == 1 else _r_type2

    def with_params(self, params):
        return MmsCase(self.bc_type, self.pressure_amplitude, self.scale,
                       params.nu, params.nu_m, params.kappa, self.zero)

    @property
    def s(self):
        return 0.0 if self.zero else self.scale

    # raw derivative tensors ---------------------------------------------
    def _dpsi(self, x, order):
        return derivatives(_psi, x, order)

    def _dw(self, x, order):
        return derivatives(self._w, x, order)

    # velocity ------------------------------------------------------------
    def u(self, x):
        _, g = self._dpsi(x, 1)
        return self.s * g @ _CU.T

    def grad_u(self, x):
        """[n, i, j] = d_j u_i."""
        _, _, H = self._dpsi(x, 2)
        return self.s * np.einsum("ij,njm->nim", _CU, H)

    def lap_u(self, x):
        _, _, _, T = self._dpsi(x, 3)
        return self.s * np.einsum("ij,njmm->ni", _CU, T)

    # magnetic field --------------------------------------------------------
    def b(self, x):
        _, g = self._dw(x, 1)
        return self.s * g @ _CB.T

    def grad_b(self, x):
        _, _, H = self._dw(x, 2)
        return self.s * np.einsum("ij,njm->nim", _CB, H)

    def curl_b(self, x):
        gb = self.grad_b(x)
        return np.einsum("imn,xnm->xi", _EPS, gb)

    def curl_curl_b(self, x):
        _, _, _, T = self._dw(x, 3)
        return -self.s * np.einsum("ij,njmm->ni", _CB, T)

    # scalars ---------------------------------------------------------------
    def p(self, x):
        return self.s * self.pressure_amplitude * derivatives(_p_shape, x, 0)[0]

    def grad_p(self, x):
        return self.s * self.pressure_amplitude * derivatives(_p_shape, x, 1)[1]

    def r(self, x):
        return self.s * derivatives(self._r, x, 0)[0]

    def grad_r(self, x):
        return self.s * derivatives(self._r, x, 1)[1]

    def div_u(self, x):
        return np.trace(self.grad_u(x), axis1=1, axis2=2)

    def div_b(self, x):
        return np.trace(self.grad_b(x), axis1=1, axis2=2)

    # forcings --------------------------------------------------------------
    def f(self, x):
        """-nu Lap u + (u . grad) u + grad p - kappa (curl b) x b."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        u, gu = self.u(x), self.grad_u(x)
        b = self.b(x)
        return (-self.nu * self.lap_u(x) + np.einsum("nij,nj->ni", gu, u) + self.grad_p(x)
                - self.kappa * np.cross(self.curl_b(x), b))

    def g(self, x):
        """kappa nu_m curl curl b + grad r - kappa curl(u x b)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        u, gu = self.u(x), self.grad_u(x)
        b, gb = self.b(x), self.grad_b(x)
        curl_uxb = np.einsum("nij,nj->ni", gu, b) - np.einsum("nij,nj->ni", gb, u)
        return (self.kappa * self.nu_m * self.curl_curl_b(x) + self.grad_r(x)
                - self.kappa * curl_uxb)


def make_default_mms(bc_type=1, pressure_amplitude=1.0, scale=0.1, params=None):
    """Default smooth manufactured solution for either boundary-condition type.

    u = curl(psi, psi, psi) with psi = [x(1-x) y(1-y) z(1-z)]^2,
    b = curl(0, 0, w), r and p trigonometric; see module functions.
    """
    case = MmsCase(bc_type, pressure_amplitude, scale)
    return case.with_params(params) if params is not None else case


def zero_mms(bc_type=1, params=None):
    case = MmsCase(bc_type, 0.0, 0.0, zero=True)
    return case.with_params(params) if params is not None else case
