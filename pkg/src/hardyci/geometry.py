"""Positive decomposition of near-identity symmetric matrices.

For A = [[a11, a12], [a12, a22]] with |A - I| < 1/8 (spectral norm, which
bounds every entry of A - I) the weights

    c1 = a11 - 1/4,  c2 = a22 - 1/4,  c3 = 1/4 + a12,  c4 = 1/4 - a12

satisfy A = sum_k c_k xh_k (x) xh_k with xh_k = xi_k / |xi_k| for the
directions e1, e2, e1 + e2, e1 - e2, and all c_k lie in (1/8, 7/8).  The
square roots Gamma_k = sqrt(c_k) are therefore smooth and bounded by 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["GeometryError", "GammaCoefficients", "gamma_decompose", "gamma_weights",
           "reconstruct", "unit_dyads", "BALL_RADIUS"]

BALL_RADIUS = 0.125
_XI = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, -1.0]])


class GeometryError(ValueError):
    """Matrix outside the admissible ball around the identity."""


@dataclass(frozen=True)
class GammaCoefficients:
    gamma: np.ndarray
    c: np.ndarray


def unit_dyads() -> np.ndarray:
    """Array (4, 2, 2) of xh_k (x) xh_k."""
    hat = _XI / np.linalg.norm(_XI, axis=1, keepdims=True)
    return np.einsum("ki,kj->kij", hat, hat)


def gamma_weights(a11, a12, a22):
    """The four affine weights c_k, elementwise on arrays."""
    a11, a12, a22 = (np.asarray(v, dtype=float) for v in (a11, a12, a22))
    return np.stack([a11 - 0.25, a22 - 0.25, 0.25 + a12, 0.25 - a12])


def gamma_decompose(A, check: bool = True) -> GammaCoefficients:
    """Weights c_k and Gamma_k = sqrt(c_k) for a symmetric 2x2 matrix (or a stack)."""
    A = np.asarray(A, dtype=float)
    if A.shape[-2:] != (2, 2):
        raise GeometryError("expected 2x2 matrices")
    if check:
        if not np.allclose(A, np.swapaxes(A, -1, -2), rtol=0, atol=1e-14):
            raise GeometryError("matrix is not symmetric")
        dist = np.abs(np.linalg.eigvalsh(A - np.eye(2))).max(axis=-1)
        if np.any(dist >= BALL_RADIUS):
            raise GeometryError(f"|A - I| = {float(np.max(dist)):.6g} is not below 1/8")
    c = gamma_weights(A[..., 0, 0], 0.5 * (A[..., 0, 1] + A[..., 1, 0]), A[..., 1, 1])
    c = np.moveaxis(c, 0, -1)
    return GammaCoefficients(np.sqrt(c), c)


def reconstruct(c) -> np.ndarray:
    """sum_k c_k xh_k (x) xh_k for weights with a trailing axis of length 4."""
    return np.einsum("...k,kij->...ij", np.asarray(c, dtype=float), unit_dyads())
