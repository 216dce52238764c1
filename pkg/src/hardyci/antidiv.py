"""Inverse divergence operators.

* `div_inv_torus`: spectral right inverse of div on mean-zero periodic vector
  fields, R = grad v + grad v^T - (div v) I with Laplace v = u.
* `separable_div_inv`: closed-form right inverse for modulated fields
  P1(y1) P2(y2) M in a frame y = lam (B x - omega t e1) with orthogonal rows
  b1, b2 of equal length.  It only uses 1D primitives of the profiles and
  keeps concentrated supports whenever the primitive is compact.
* `s_n`, `s_tilde_n`: the recursive bilinear operators with r + div R = f u.
* `mat_antidiv`: the explicit A/B tensors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import (FieldExpr, Frame, ModulatedField, Support, Term,
                     X1, X2, zero)
from .jets import Jet
from .profiles import Constant, Periodic1D

__all__ = ["AntidivError", "AntidivResult", "div_inv_torus", "TorusSpectralField",
           "separable_div_inv", "s_n", "s_tilde_n", "mat_antidiv", "pattern_mean"]


class AntidivError(ValueError):
    """Precondition failure of an antidivergence operator."""


@dataclass
class AntidivResult:
    r: FieldExpr
    R: FieldExpr
    N: int


# --- spectral inverse on the torus ------------------------------------------

class TorusSpectralField(FieldExpr):
    """Trigonometric polynomial on T^2 (optionally dilated x -> lam x) given by FFT data."""

    def __init__(self, coeffs: np.ndarray, shape, lam: int = 1):
        self.coeffs = coeffs          # (*shape, n, n) complex, numpy fft ordering
        self.shape = tuple(shape)
        self.lam = int(lam)
        self.support = Support.periodic()
        self.periodic = True
        n = coeffs.shape[-1]
        self.freq = np.fft.fftfreq(n, 1.0 / n)

    def _eval(self, ev, order):
        from .jets import multi_indices
        x = ev.x * self.lam
        k = self.freq
        E1 = np.exp(2j * np.pi * np.multiply.outer(x[0], k))      # (n_pts, n)
        E2 = np.exp(2j * np.pi * np.multiply.outer(x[1], k))
        comp = int(np.prod(self.shape)) if self.shape else 1
        C = self.coeffs.reshape((comp,) + self.coeffs.shape[-2:]) / self.coeffs.shape[-1] ** 2
        idx = multi_indices(order)
        out = np.zeros((len(idx), comp, ev.n))
        from math import factorial
        for j, a in enumerate(idx):
            if a[2] != 0:
                continue
            m1 = (2j * np.pi * k * self.lam) ** a[0]
            m2 = (2j * np.pi * k * self.lam) ** a[1]
            for c in range(comp):
                A = (E1 * m1) @ C[c]
                out[j, c] = np.real(np.sum(A * (E2 * m2), axis=1)) / (factorial(a[0]) * factorial(a[1]))
        return Jet(out.reshape((len(idx),) + self.shape + (ev.n,)), order)


def _grid_values(u: FieldExpr, n: int) -> np.ndarray:
    x = np.arange(n) / n
    X, Y = np.meshgrid(x, x, indexing="ij")
    v = u(np.stack([X.ravel(), Y.ravel()]), 0.0)
    return v.reshape(u.shape + (n, n))


def div_inv_torus(u: FieldExpr, n: int = 256, lam: int = 1, tol: float = 1e-10) -> TorusSpectralField:
    """Symmetric trace-free R with div R = u for a mean-zero periodic vector field.

    `lam` evaluates the result for the dilated input u(lam x): because the
    operator commutes with integer dilations, div^{-1}(u(lam .)) equals
    (1/lam)(div^{-1} u)(lam .), so only the unit-frequency data is transformed.
    """
    if u.shape != (2,):
        raise AntidivError("div_inv_torus expects a vector field")
    vals = _grid_values(u, n)
    uh = np.fft.fft2(vals)
    mean = uh[:, 0, 0].real / n ** 2
    if np.max(np.abs(mean)) > tol:
        raise AntidivError(f"input mean {mean} is not zero")
    k = np.fft.fftfreq(n, 1.0 / n)
    K1, K2 = np.meshgrid(k, k, indexing="ij")
    k2 = K1 ** 2 + K2 ** 2
    k2[0, 0] = 1.0
    vh = -uh / (4 * np.pi ** 2 * k2)
    vh[:, 0, 0] = 0.0
    d1 = 2j * np.pi * K1
    d2 = 2j * np.pi * K2
    g = np.array([[d1 * vh[0], d2 * vh[0]], [d1 * vh[1], d2 * vh[1]]])   # g[i, j] = d_j v_i
    divv = g[0, 0] + g[1, 1]
    R = g + np.swapaxes(g, 0, 1)
    R[0, 0] -= divv
    R[1, 1] -= divv
    return TorusSpectralField(R / lam, (2, 2), lam)


# --- separable closed-form inverse ------------------------------------------

def pattern_mean(u: ModulatedField) -> np.ndarray:
    """Cell mean of a coefficient-free modulated field."""
    out = np.zeros(u.shape)
    for t in u.terms:
        if t.coef is not None:
            raise AntidivError("pattern has a coefficient")
        out = out + t.p1.mean() * t.p2.mean() * t.M
    return out


def _frame_basis(frame: Frame):
    b1 = frame.B[0].astype(float)
    b2 = frame.B[1].astype(float)
    return b1, b2, float(b1 @ b1)


def _prim(p: Periodic1D) -> Periodic1D:
    return p.primitive()


def _centered(p: Periodic1D):
    """(p - mean, mean), with constants handled exactly."""
    m = p.mean()
    if isinstance(p, Constant):
        return Constant(0.0), m
    if abs(m) < 1e-15:
        return p, 0.0
    return p - m, m


def _dsep_term(p1, p2, frame: Frame, M) -> list:
    """Terms of a symmetric R with div R = (P1 P2 - mean) M, M a vector."""
    b1, b2, nb = _frame_basis(frame)
    lam = frame.lam
    a = float(M @ b1) / nb           # component along b1
    c = float(M @ b2) / nb           # component along b2
    s11 = np.outer(b1, b1)
    s22 = np.outer(b2, b2)
    s12 = np.outer(b1, b2) + np.outer(b2, b1)
    scale = 1.0 / (lam * nb)
    q1, m1 = _centered(p1)
    q2, m2 = _centered(p2)
    out = []
    # (P1 - m1) P2 part
    if not q1.is_zero():
        P1 = _prim(q1)
        if a != 0.0:
            out.append(Term(None, P1, p2, frame, a * scale * s11))
        if c != 0.0:
            out.append(Term(None, P1, p2, frame, c * scale * s12))
            if not isinstance(p2, Constant):
                out.append(Term(None, _prim(P1), p2.derivative(), frame, -c * scale * s11))
    # m1 (P2 - m2) part
    if m1 != 0.0 and not q2.is_zero():
        P2 = _prim(q2)
        if c != 0.0:
            out.append(Term(None, Constant(m1), P2, frame, c * scale * s22))
        if a != 0.0:
            out.append(Term(None, Constant(m1), P2, frame, a * scale * s12))
    return out


def separable_div_inv(u: ModulatedField, tol: float = 1e-9) -> ModulatedField:
    """Closed-form periodic, mean-zero, symmetric R with div R = u."""
    if u.shape != (2,):
        raise AntidivError("separable_div_inv expects a vector pattern")
    mean = pattern_mean(u)
    scale = max((np.abs(t.M).max() for t in u.terms), default=0.0)
    if np.max(np.abs(mean)) > tol * max(scale, 1.0):
        raise AntidivError(f"pattern mean {mean} is not zero")
    terms = []
    for t in u.terms:
        terms.extend(_dsep_term(t.p1, t.p2, t.frame, t.M))
    return ModulatedField(terms, (2, 2))


# --- recursive operators -----------------------------------------------------

def _as_pattern(u) -> ModulatedField:
    if not isinstance(u, ModulatedField):
        raise AntidivError("the periodic factor must be a modulated pattern")
    if u.shape != (2,):
        raise AntidivError("the periodic factor must be a vector field")
    return u


def _s_rec(f: FieldExpr, u: ModulatedField, N: int, D):
    if N == 0:
        return u.times(f), zero((2, 2))
    Du = D(u)
    R = Du.times(f)
    r = None
    for k, var in ((0, X1), (1, X2)):
        col = Du.dot_const(np.eye(2)[k])
        if col.is_zero():
            continue
        dk = f.diff(var)
        if dk.is_zero():
            continue
        rk, Rk = _s_rec(dk, col, N - 1, D)
        R = R - Rk
        r = -1.0 * rk if r is None else r - rk
    return (r if r is not None else zero((2,))), R


def s_n(f: FieldExpr, u, N: int, D=None) -> AntidivResult:
    """r + div R = f u with R_N = f D(u) - sum_k R_{N-1}(d_k f, D(u) e_k)."""
    if N < 1:
        raise AntidivError("N must be at least 1")
    u = _as_pattern(u)
    if f.shape != ():
        raise AntidivError("f must be scalar")
    D = D or separable_div_inv
    r, R = _s_rec(f, u, N, D)
    return AntidivResult(r, R, N)


def s_tilde_n(f: FieldExpr, T, N: int, D=None) -> AntidivResult:
    """sum_k S_N(f_k, T e_k): r + div R = T f."""
    if not isinstance(T, ModulatedField) or T.shape != (2, 2):
        raise AntidivError("T must be a tensor pattern")
    if f.shape != (2,):
        raise AntidivError("f must be a vector field")
    r_tot, R_tot = None, None
    for k in (0, 1):
        col = T.dot_const(np.eye(2)[k])
        if col.is_zero():
            continue
        res = s_n(f[k], col, N, D)
        r_tot = res.r if r_tot is None else r_tot + res.r
        R_tot = res.R if R_tot is None else R_tot + res.R
    return AntidivResult(r_tot if r_tot is not None else zero((2,)),
                         R_tot if R_tot is not None else zero((2, 2)), N)


# --- explicit tensors -----------------------------------------------------------

def mat_antidiv(kind: str, psi1: Periodic1D, psi2: Periodic1D, Psi: Periodic1D, direction,
                lam: float = 1.0, omega: float = 0.0, check: bool = True, rtol: float = 1e-8) -> ModulatedField:
    """A or B tensor of (psi1, psi2) along a direction, in the frame (lam, omega).

    div A = psi1(y1) psi2(y2) xi and div B = psi1(y1) psi2(y2) xi_perp, where
    y is the moving phase; Psi'' = psi2 is required.
    """
    if kind not in ("A", "B"):
        raise AntidivError("kind must be 'A' or 'B'")
    if check:
        y = np.linspace(0.0, 1.0, 4001, endpoint=False)
        lhs = Psi.derivs(y, 2)[2]
        rhs = psi2(y)
        if np.max(np.abs(lhs - rhs)) > rtol * max(np.max(np.abs(rhs)), 1e-300):
            raise AntidivError("chain error: Psi'' differs from psi2")
    frame = Frame(direction, lam, omega)
    h, hp = direction.hat, direction.hat_perp
    sym = np.outer(h, hp) + np.outer(hp, h)
    s = 1.0 / lam
    dPsi = Psi.derivative()
    if kind == "A":
        terms = [Term(None, psi1, dPsi, frame, s * sym),
                 Term(None, psi1.derivative(), Psi, frame, -s * np.outer(hp, hp))]
    else:
        terms = [Term(None, psi1, dPsi, frame, s * np.outer(hp, hp))]
    return ModulatedField(terms, (2, 2))
