"""Interior-penalty DG and divergence-free HDG solvers for stationary incompressible MHD."""

__version__ = "0.1.0"
