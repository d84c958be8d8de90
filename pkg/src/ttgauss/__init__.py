"""Tensor-train toolkit for Gaussian densities.

Subpackages implement, in dependency order: a dense linear-algebra kernel
(`linalg`), the discrete tensor-train format (`tt`), rank-adaptive cross
approximation (`cross`), the functional TT layer on Gauss-Legendre grids
(`ftt`), the Gaussian model toolkit with a-priori rank-bound evaluators
(`gaussian`), an extended Kalman filter for coupled pendulums
(`filtering`), and the experiment sweeps behind the command line
(`experiments`, `cli`).
"""

__version__ = "0.1.0"
