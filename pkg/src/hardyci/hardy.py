"""Hardy-space H^p(R^2) estimates for 2/3 < p < 1.

Two estimators:

* the atomic upper bound sum_j C^p |B_j| ||theta_j||_inf^p over zero-mean
  pieces theta_j supported in balls B_j (p-subadditivity of the
  quasinorm); C is calibrated once on a canonical atom;
* a grid estimate of int (sup_zeta |f * Psi_zeta|)^p dx with Psi a unit-mass
  Gaussian and zeta on a geometric ladder of ratio sqrt 2.  The finite
  ladder makes it a lower-biased estimate of the radial maximal norm.

`weak_l1_demo` is the one-dimensional example of a sequence that goes to
zero in weak L^1 but to the Dirac mass in distributions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.special import roots_legendre

from .blocks import support_lattice, verify_disjointness
from .fields import FieldExpr, curl, perp_grad

__all__ = ["HardyError", "AtomPiece", "HpEstimate", "canonical_atom", "hp_atom_bound",
           "hp_maximal_estimate", "calibrate", "curl_hp_report", "weak_l1_demo", "WeakL1Demo",
           "weak_l1_norm", "check_exponent", "scaling_field", "hp_scaling"]


class HardyError(ValueError):
    """Invalid exponent, non-zero-mean piece, or overlapping decomposition."""


def check_exponent(p: float):
    if not 2.0 / 3.0 < p < 1.0:
        raise HardyError(f"unsupported exponent p = {p}: only 2/3 < p < 1 is handled")


@dataclass
class AtomPiece:
    center: np.ndarray
    radius: float
    field: object                # FieldExpr, callable, or None when only the numbers are kept
    sup_norm: float
    mean: float                  # integral of the piece
    name: str = ""

    def mean_ok(self, rtol: float = 1e-9) -> bool:
        area = np.pi * self.radius ** 2
        return abs(self.mean) <= rtol * self.sup_norm * area + 1e-300


@dataclass
class HpEstimate:
    p: float
    atom_bound: float            # upper bound on ||f||_{H^p}^p
    maximal_estimate: float      # grid value of ||m_Psi f||_{L^p}^p (nan if not computed)
    piece_count: int
    C: float
    meta: dict = field(default_factory=dict)


# --- canonical atom and calibration ------------------------------------------------

def canonical_atom(x, center=(0.0, 0.0), radius: float = 1.0, height: float = 1.0):
    """(1 - 4 s)(1 - s)^2 with s = |x - c|^2 / r^2 on the ball: zero mean, sup = height."""
    x = np.asarray(x, dtype=float)
    c = np.asarray(center, dtype=float).reshape((2,) + (1,) * (x.ndim - 1))
    s = np.sum((x - c) ** 2, axis=0) / radius ** 2
    return np.where(s < 1.0, height * (1 - 4 * s) * (1 - s) ** 2, 0.0)


def hp_maximal_estimate(f, p: float, extent: float, n: int = 256, zeta_min: float | None = None,
                        zeta_max: float | None = None, ratio: float = np.sqrt(2.0)) -> float:
    """int (max_zeta |f * Psi_zeta|)^p dx over [-extent, extent]^2 on an n x n grid.

    f is a callable of points (2, m) or a FieldExpr (evaluated at t = 0).
    The convolution is done by FFT on a zero-padded grid (no wrap-around).
    """
    check_exponent(p)
    h = 2 * extent / n
    g = -extent + h * (np.arange(n) + 0.5)
    X, Y = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()])
    vals = np.asarray(f(pts) if not isinstance(f, FieldExpr) else f(pts, 0.0)).reshape(n, n)
    if not np.any(vals):
        return 0.0
    zeta_min = zeta_min or h
    zeta_max = zeta_max or 8 * extent
    m = 2 * n
    Fh = np.fft.rfft2(vals, s=(m, m))
    k1 = 2 * np.pi * np.fft.fftfreq(m, h)
    k2 = 2 * np.pi * np.fft.rfftfreq(m, h)
    K2 = k1[:, None] ** 2 + k2[None, :] ** 2
    best = np.zeros((n, n))
    z = zeta_min
    while z <= zeta_max * (1 + 1e-12):
        conv = np.fft.irfft2(Fh * np.exp(-0.5 * z * z * K2), s=(m, m))[:n, :n]
        np.maximum(best, np.abs(conv), out=best)
        z *= ratio
    return float(np.sum(best ** p) * h * h)


_CAL = {}


def calibrate(p: float, n: int = 256, extent: float = 8.0) -> float:
    """C with C^p |B| = maximal estimate of the canonical unit atom."""
    check_exponent(p)
    key = (round(p, 12), n, extent)
    if key not in _CAL:
        m = hp_maximal_estimate(canonical_atom, p, extent, n)
        _CAL[key] = (m / np.pi) ** (1.0 / p)
    return _CAL[key]


def hp_atom_bound(pieces, p: float, C: float | None = None, rtol: float = 1e-9) -> float:
    """sum_j C^p pi r_j^2 ||theta_j||_inf^p for zero-mean pieces."""
    check_exponent(p)
    C = calibrate(p) if C is None else C
    total = 0.0
    for i, pc in enumerate(pieces):
        if not pc.mean_ok(rtol):
            raise HardyError(f"piece {pc.name or i} has nonzero mean {pc.mean:.3e}")
        total += C ** p * np.pi * pc.radius ** 2 * pc.sup_norm ** p
    return float(total)


def scaling_field(l: int, mu: float):
    """d^l/dx1^l of phi(mu x) with phi the canonical atom.

    phi is radial with zero mean, so both fields have vanishing moments up to
    first order and their maximal functions decay fast enough for a fixed
    finite grid to capture the norm.
    """
    if l == 0:
        return lambda x: canonical_atom(np.asarray(x) * mu)
    if l == 1:
        def f(x):
            y = np.asarray(x, dtype=float) * mu
            s = np.sum(y * y, axis=0)
            return np.where(s < 1.0, 2.0 * mu * y[0] * (1 - s) * (12 * s - 6), 0.0)
        return f
    raise HardyError("only l in {0, 1} is implemented")


def hp_scaling(l: int, p: float = 0.75, mus=(4.0, 8.0, 16.0), n: int = 1024, extent: float = 2.0) -> dict:
    """Slope of log(maximal estimate^(1/p)) against log mu for the dilated test fields."""
    check_exponent(p)
    vals = [hp_maximal_estimate(scaling_field(l, mu), p, extent, n) ** (1.0 / p) for mu in mus]
    slope = float(np.polyfit(np.log(mus), np.log(vals), 1)[0])
    return {"l": l, "p": p, "mus": list(mus), "values": vals, "slope": slope,
            "predicted": l - 2.0 / p}


# --- curl decomposition over the support lattice -------------------------------------------

def _local_grid(center, radius, m):
    g = np.linspace(-radius, radius, m)
    X, Y = np.meshgrid(g, g, indexing="ij")
    keep = X ** 2 + Y ** 2 <= radius ** 2
    pts = np.stack([X[keep], Y[keep]])
    w = (g[1] - g[0]) ** 2
    return pts, w


def _pieces_of(field: FieldExpr, lattice, t: float, m: int, name: str):
    """AtomPieces of `field` restricted to the lattice balls (sup and mean by local grids)."""
    pieces = []
    if len(lattice) == 0:
        return pieces
    off, w = _local_grid((0.0, 0.0), lattice.radius, m)
    npts = off.shape[1]
    cs = lattice.centers
    step = max(1, 65536 // npts)
    for c0 in range(0, len(cs), step):
        cc = cs[c0:c0 + step]
        pts = (cc[:, :, None] + off[None]).transpose(1, 0, 2).reshape(2, -1)
        v = np.asarray(field(pts, t)).reshape(len(cc), npts)
        for j, c in enumerate(cc):
            pieces.append(AtomPiece(c, lattice.radius, None, float(np.abs(v[j]).max()),
                                    float(v[j].sum() * w), f"{name}@{c0 + j}"))
    return pieces


def curl_hp_report(bundle, state0, params, p: float = 0.75, t: float = 0.0, m: int = 41,
                   check_disjoint: bool = True) -> dict:
    """Atomic H^p bounds of curl w, curl u^t and curl v at time t.

    curl w = -sum_k Laplace H^k and curl u^t = curl F (the projection
    removes a gradient) are split over the balls of the support lattice.
    Piece means are reported but not enforced here: on a grid the
    divergence-theorem cancellation holds only to quadrature accuracy.
    curl v is reported through its atom bound only when r0 is nonzero.
    """
    check_exponent(p)
    if check_disjoint:
        rep = verify_disjointness(params, [t], bundle.coeffs.kappa)
        if not rep.disjoint:
            raise HardyError(f"supports overlap (pair {rep.worst_pair}); atoms would double-count")
    C = calibrate(p)
    out = {}
    kappa = bundle.coeffs.kappa
    w_pieces, t_pieces = [], []
    for i, bf in enumerate(bundle.blocks):
        lat = support_lattice(bf.k, params, t, kappa)
        w_pieces += _pieces_of(curl(perp_grad(bundle.H[i])), lat, t, m, f"curl w[{bf.k}]")
        Fk = bf.Y.times(bundle.coeffs.a_sq[i]) * -1.0
        t_pieces += _pieces_of(curl(Fk), lat, t, m, f"curl u^t[{bf.k}]")
    for name, pcs in (("curl_w", w_pieces), ("curl_ut", t_pieces)):
        worst = max((abs(pc.mean) / (pc.sup_norm * np.pi * pc.radius ** 2 + 1e-300) for pc in pcs),
                    default=0.0)
        bound = float(sum(C ** p * np.pi * pc.radius ** 2 * pc.sup_norm ** p for pc in pcs))
        out[name] = HpEstimate(p, bound, float("nan"), len(pcs), C, {"worst_relative_mean": worst})
    out["curl_v"] = HpEstimate(p, 0.0, 0.0, 0, C, {"r0_zero": state0.r.is_zero()})
    return out


# --- weak L^1 versus distributions -----------------------------------------------------------

@dataclass
class WeakL1Demo:
    n: int
    integral: Fraction           # exact int f_n
    weak_norm: Fraction          # exact sup_t t |{|f_n| >= t}|
    pairing_error: float         # |<f_n, phi> - phi(0)|


def _bump(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1
    out[inside] = np.exp(-1.0 / (1.0 - x[inside] ** 2))
    return out


def weak_l1_norm(values, lengths) -> Fraction:
    """Exact sup_t t |{|f| >= t}| of a step function with the given (value, length) pieces."""
    vals = [abs(Fraction(v)) for v in values]
    lens = [Fraction(l) for l in lengths]
    best = Fraction(0)
    for v in set(vals):
        meas = sum(l for u, l in zip(vals, lens) if u >= v)
        best = max(best, v * meas)
    return best


def weak_l1_demo(n: int, phi=_bump, nodes: int = 16) -> WeakL1Demo:
    """f_n = (1/n) sum_{j<n} 2^(n+j) 1_[2^-(n+j), 2^-(n+j-1)]."""
    if n < 1:
        raise ValueError("n must be positive")
    values = [Fraction(2 ** (n + j), n) for j in range(n)]
    lengths = [Fraction(1, 2 ** (n + j)) for j in range(n)]
    integral = sum(v * l for v, l in zip(values, lengths))
    g, w = roots_legendre(nodes)
    pair = 0.0
    for j in range(n):
        a, b = 2.0 ** -(n + j), 2.0 ** -(n + j - 1)
        x = 0.5 * (a + b) + 0.5 * (b - a) * g
        pair += float(values[j]) * 0.5 * (b - a) * float(np.sum(w * phi(x)))
    return WeakL1Demo(n, integral, weak_l1_norm(values, lengths), abs(pair - float(phi(0.0))))
