"""Numerical companion for a convex-integration construction of 2D Euler
weak solutions with curl in Hardy space: profiles, modulated fields,
building blocks, antidivergences, one-step perturbations, error
assembly, Hardy-space estimates and the parameter scheduler."""
from .params import ParamSet, ParameterError, delta_n, eta_n

__version__ = "0.1.0"
__all__ = ["ParamSet", "ParameterError", "delta_n", "eta_n", "__version__"]
