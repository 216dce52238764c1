"""Perturbation assembly for one convex-integration step.

Given a Reynolds state (u0, p0, R0, r0) and an energy profile e(t) this
module builds the cutoff chi, the amplitude rho, the coefficients a_k, and
the perturbations

    w   = sum_k perp_grad H^k = u^p + u^c,
    u^t = -sum_k P(a_k^2 Y_k),
    v   = P int_0^t r0 ds.

The Leray projector P is realized in two pieces.  Smooth, compactly
supported inputs are projected exactly on a periodic box (`BoxPotential`).
The oscillating part of a_k^2 Y_k lives at the scale 1/(lam mu2), far
below any grid; its potential is the two-scale ansatz (a_k^2/(omega lam))
Q_k(y) with Q_k the exact periodic cell solution of Laplace Q = d_1(h1 h2)
(`CellPoisson`).  The defect equation does not depend on how accurate
the potential is (the same potential enters u^t and the pressure), only
div u^t does; that residual is the `div_u` field of `error.defect_residual`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np
from scipy.interpolate import PchipInterpolator

from .blocks import make_blocks
from .fields import (CellField, ConstantField, Coordinate, ComposeField, DIRECTIONS, FieldExpr,
                     Frame, FrozenTimeField, ModulatedField, Support, SumField, Term,
                     TimeFunction, TimeIntegralField, X1, X2, grad, perp_grad,
                     traceless, zero)
from .jets import Jet, T, multi_indices
from .params import ParamSet, ParameterError
from .profiles import Concentrated, Constant, SmoothStep, gauss

__all__ = ["EnergyProfile", "ReynoldsState", "zero_state", "cutoff", "chi_norm_sq",
           "tail_l1", "choose_kappa", "choose_epsilon", "HypothesisError", "check_hypotheses",
           "Coefficients", "assemble_coefficients", "BoxPotential", "LerayResult",
           "leray_project", "CellPoisson", "PerturbationBundle", "assemble_perturbation",
           "time_integral", "vortex_state", "ParamSet"]


class HypothesisError(ValueError):
    """A step hypothesis on the incoming state fails."""


# --- energy profiles ----------------------------------------------------------

class EnergyProfile:
    """Prescribed energy e(t) on [0, 1] with values in [1/2, 1].

    Kinds: constant(e), affine(e0, e1), table(ts, es) (monotone cubic,
    only C^1), smooth_step(e0, e1, t0, t1) (C-infinity, equal to e0 on
    [0, t0] and to e1 on [t1, 1]).
    """

    _step = None

    def __init__(self, kind: str, *args, check: bool = True):
        self.kind = kind
        self.args = tuple(args)
        if kind == "constant":
            (self.e0,) = (float(args[0]),)
        elif kind == "affine":
            self.e0, self.e1 = map(float, args)
        elif kind == "table":
            ts, es = np.asarray(args[0], float), np.asarray(args[1], float)
            if ts.ndim != 1 or ts.size < 2 or np.any(np.diff(ts) <= 0):
                raise ParameterError("table times must be increasing")
            self._pchip = PchipInterpolator(ts, es, extrapolate=True)
        elif kind == "smooth_step":
            self.e0, self.e1, self.t0, self.t1 = map(float, args)
            if not self.t1 > self.t0:
                raise ParameterError("smooth_step needs t1 > t0")
            if EnergyProfile._step is None:
                EnergyProfile._step = SmoothStep()
        else:
            raise ParameterError(f"unknown energy profile kind {kind!r}")
        if check:
            v = self(np.linspace(0.0, 1.0, 201))
            if np.any(v < 0.5 - 1e-12) or np.any(v > 1.0 + 1e-12):
                raise ParameterError("energy profile values must lie in [1/2, 1]")

    @classmethod
    def constant(cls, e: float = 1.0):
        return cls("constant", e)

    @classmethod
    def affine(cls, e0: float, e1: float):
        return cls("affine", e0, e1)

    @classmethod
    def table(cls, ts, es):
        return cls("table", ts, es)

    @classmethod
    def smooth_step(cls, e0: float, e1: float, t0: float, t1: float):
        return cls("smooth_step", e0, e1, t0, t1)

    def derivs(self, t, n: int) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros((n + 1,) + t.shape)
        if self.kind == "constant":
            out[0] = self.e0
        elif self.kind == "affine":
            out[0] = self.e0 + (self.e1 - self.e0) * t
            if n >= 1:
                out[1] = self.e1 - self.e0
        elif self.kind == "table":
            for j in range(n + 1):
                out[j] = self._pchip(t, nu=j) if j <= 3 else 0.0
        else:
            h = self.t1 - self.t0
            s = self._step.derivs((t - self.t0) / h, n)
            out[0] = self.e1 + (self.e0 - self.e1) * s[0]
            for j in range(1, n + 1):
                out[j] = (self.e0 - self.e1) * s[j] / h ** j
        return out

    def __call__(self, t):
        return self.derivs(t, 0)[0]

    def field(self) -> TimeFunction:
        return TimeFunction(self.derivs, f"e[{self.kind}]")

    def nonincreasing(self, n: int = 401) -> bool:
        v = self(np.linspace(0.0, 1.0, n))
        return bool(np.all(np.diff(v) <= 1e-12))

    def spec(self) -> dict:
        args = [np.asarray(a).tolist() if np.ndim(a) else float(a) for a in self.args]
        return {"kind": self.kind, "args": args}


# --- Reynolds states ------------------------------------------------------------

@dataclass
class ReynoldsState:
    """(u, p, R, r) on [0, 1] x R^2 together with bookkeeping for the next step.

    `energy` is a TimeFunction for int |u|^2 dx (exact for the zero state,
    the designed value afterwards); `bounds` holds measured norms used by
    the step hypotheses: R_L1, r_L2, u_L2 (sup over sampled t).
    """

    u: FieldExpr
    p: FieldExpr
    R: FieldExpr
    r: FieldExpr
    energy: TimeFunction
    step: int = 0
    delta: float = 1.0
    bounds: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def is_zero(self) -> bool:
        return all(f.is_zero() for f in (self.u, self.p, self.R, self.r))


def _zero_time(t, n):
    t = np.asarray(t, dtype=float)
    return np.zeros((n + 1,) + t.shape)


def zero_state(delta: float = 1.0) -> ReynoldsState:
    return ReynoldsState(zero((2,)), zero(), zero((2, 2)), zero((2,)),
                         TimeFunction(_zero_time, "0"), 0, delta,
                         {"R_L1": 0.0, "r_L2": 0.0, "u_L2": 0.0})


def vortex_state(delta: float, level: float = 1.0) -> ReynoldsState:
    """Steady Gaussian vortex with int |u|^2 = (1 - delta) level and R = r = 0.

    u = grad^perp(A exp(-|x|^2/2)) is radial in vorticity, hence an exact
    stationary Euler solution with p = -(A^2/2) exp(-|x|^2).
    """
    if not 0.0 < delta < 1.0:
        raise ParameterError("vortex state needs 0 < delta < 1")
    E = (1.0 - delta) * level
    A = np.sqrt(E / np.pi)
    r2 = Coordinate(0) * Coordinate(0) + Coordinate(1) * Coordinate(1)
    psi = A * ComposeField(-0.5 * r2, "exp")
    u = perp_grad(psi)
    p = (-0.5 * A * A) * ComposeField(-1.0 * r2, "exp")

    def energy(t, n):
        out = np.zeros((n + 1,) + np.shape(t))
        out[0] = E
        return out

    return ReynoldsState(u, p, zero((2, 2)), zero((2,)), TimeFunction(energy, "E0"), 0, delta,
                         {"R_L1": 0.0, "r_L2": 0.0, "u_L2": float(np.sqrt(E))}, {"kind": "vortex"})


# --- cutoff, kappa, epsilon ---------------------------------------------------------

_STEP = None


def _smooth_step() -> SmoothStep:
    global _STEP
    if _STEP is None:
        _STEP = SmoothStep()
    return _STEP


def cutoff(kappa: int) -> FieldExpr:
    """Radial chi with chi = 1 on B_kappa and chi = 0 off B_(kappa+1)."""
    step = _smooth_step()
    k0, k1 = float(kappa) ** 2, float(kappa + 1) ** 2
    r2 = Coordinate(X1) * Coordinate(X1) + Coordinate(X2) * Coordinate(X2)
    z = (r2 - k0) * (1.0 / (k1 - k0))
    chi = ComposeField(z, "user0", derivs=lambda v, n: step.derivs(v, n))
    chi.support = Support.compact(kappa + 1.0)
    chi.name = f"chi_{kappa}"
    return chi


def chi_norm_sq(kappa: int, nodes: int = 200) -> float:
    """||chi_kappa||_{L^2}^2 = pi kappa^2 + pi (2 kappa + 1) int_0^1 S(z)^2 dz."""
    g, w = gauss(nodes)
    s = _smooth_step().derivs(g, 0)[0]
    return float(np.pi * kappa ** 2 + np.pi * (2 * kappa + 1) * np.sum(w * s * s))


def tail_l1(R: FieldExpr, kappa: float, t: float = 0.0, rmax: float | None = None,
            nr: int = 8, ntheta: int = 256) -> float:
    """int_{|x| > kappa} |R(x, t)| dx by polar Gauss x trapezoid quadrature."""
    if R.is_zero():
        return 0.0
    if rmax is None:
        rmax = R.support.box * np.sqrt(2.0) if R.support.kind == "compact" else 40.0
    if rmax <= kappa:
        return 0.0
    npan = max(4, int(np.ceil((rmax - kappa) / 0.25)))
    edges = np.linspace(kappa, rmax, npan + 1)
    g, w = gauss(nr)
    r = (edges[:-1, None] + np.diff(edges)[:, None] * g).ravel()
    wr = (np.diff(edges)[:, None] * w).ravel()
    th = 2 * np.pi * np.arange(ntheta) / ntheta
    Rr, Th = np.meshgrid(r, th, indexing="ij")
    pts = np.stack([(Rr * np.cos(Th)).ravel(), (Rr * np.sin(Th)).ravel()])
    v = R(pts, t)
    nv = np.sqrt(np.sum(v.reshape(-1, pts.shape[1]) ** 2, axis=0))
    W = (wr[:, None] * r[:, None] * np.full(ntheta, 2 * np.pi / ntheta)).ravel()
    return float(np.sum(W * nv))


def choose_kappa(R0: FieldExpr, eta: float, t_samples=(0.0, 0.5, 1.0), cap: int = 64,
                 tail=None) -> tuple:
    """Smallest integer kappa >= 1 with sup_t ||traceless R0||_{L^1(|x| > kappa)} <= eta/2.

    Returns (kappa, tail value, capped flag).  `tail(Rc, kappa, t)` may
    replace the default polar quadrature.
    """
    if R0.is_zero():
        return 1, 0.0, False
    Rc = traceless(R0)
    tail = tail or (lambda f, k, t: tail_l1(f, k, t))
    val = np.inf
    for kappa in range(1, cap + 1):
        val = max(tail(Rc, kappa, t) for t in t_samples)
        if val <= eta / 2:
            return kappa, val, False
    return cap, val, True


def choose_epsilon(kappa: int, delta: float) -> float:
    """epsilon with 10% headroom in 20 pi (kappa+1)^2 eps < delta/32 and
    sqrt(10 pi) ((kappa+1) eps^{1/2} + delta^{1/2}) <= 10 delta^{1/2}."""
    e1 = delta / (640.0 * np.pi * (kappa + 1) ** 2)
    e2 = delta * (10.0 / np.sqrt(10.0 * np.pi) - 1.0) ** 2 / (kappa + 1) ** 2
    return 0.9 * min(e1, e2)


# --- hypotheses ----------------------------------------------------------------------

def check_hypotheses(state: ReynoldsState, e: EnergyProfile, delta: float,
                     t_samples=None) -> dict:
    """Margins of the two step hypotheses (positive margin = satisfied)."""
    ts = np.linspace(0.0, 1.0, 11) if t_samples is None else np.asarray(t_samples, float)
    ev = e(ts)
    E0 = state.energy.jet(np.zeros((2, ts.size)), ts, 0).val
    gap = ev - E0
    lo = gap - 0.75 * delta * ev
    hi = 1.25 * delta * ev - gap
    b = state.bounds
    rhs = 40 * b.get("R_L1", 0.0) + b.get("r_L2", 0.0) + 2 * b.get("u_L2", 0.0) * b.get("r_L2", 0.0)
    out = {
        "energy_lower_margin": float(lo.min()), "energy_upper_margin": float(hi.min()),
        "energy_worst_t": float(ts[np.argmin(np.minimum(lo, hi))]),
        "r_condition": float(rhs), "r_margin": float(delta / 32 - rhs),
    }
    out["ok"] = bool(out["energy_lower_margin"] >= -1e-12 and out["energy_upper_margin"] >= -1e-12
                     and out["r_margin"] >= -1e-12)
    return out


# --- coefficients --------------------------------------------------------------------

@dataclass
class Coefficients:
    kappa: int
    epsilon: float
    chi: FieldExpr
    chi_sq_norm: float
    gamma: TimeFunction
    rho: FieldExpr
    a: list                      # a_k, k = 1..4
    a_sq: list                   # a_k^2 written without square roots
    b1: list
    b2: list
    R0c: FieldExpr               # traceless part of R0
    hypotheses: dict


_CK = (0.75, 0.75, 0.25, 0.25)


def _linear_parts(R0c: FieldExpr):
    """L_k(R0c): R11, R22, R12, -R12 (zero fields for a vanishing R0)."""
    if R0c.is_zero():
        return [zero()] * 4
    R11, R22, R12 = R0c[0, 0], R0c[1, 1], R0c[0, 1]
    return [R11, R22, R12, -1.0 * R12]


def assemble_coefficients(state: ReynoldsState, e: EnergyProfile, params: ParamSet,
                          kappa: int | None = None, epsilon: float | None = None,
                          check: bool = True, t_samples=None) -> Coefficients:
    """chi, gamma(t), rho and a_k with chi^2 rho I + chi^2 R0c = sum a_k^2 xh_k (x) xh_k."""
    delta = params.delta
    hyp = check_hypotheses(state, e, delta, t_samples)
    if check and not hyp["ok"]:
        which = [k for k in ("energy_lower_margin", "energy_upper_margin", "r_margin") if hyp[k] < 0]
        raise HypothesisError(f"step hypothesis violated: {which} (worst t = {hyp['energy_worst_t']:g}, "
                              f"margins {hyp})")
    R0c = traceless(state.R)
    if kappa is None:
        kappa = params.kappa if R0c.is_zero() else choose_kappa(state.R, params.eta)[0]
    if epsilon is None:
        epsilon = min(params.epsilon, choose_epsilon(kappa, delta))
    chi = cutoff(kappa)
    cn = chi_norm_sq(kappa)
    E0 = state.energy

    def gderivs(t, n):
        ed = e.derivs(t, n)
        e0 = E0._derivs(t, n)
        return (ed * (1 - delta / 2) - e0) / (2 * cn)

    gamma = TimeFunction(gderivs, "gamma")
    if R0c.is_zero():
        mag = ConstantField(np.array(epsilon))
    else:
        R11, R12 = R0c[0, 0], R0c[0, 1]
        mag = ComposeField(epsilon ** 2 + 2.0 * (R11 * R11) + 2.0 * (R12 * R12), "sqrt")
    rho = 10.0 * mag + gamma
    L = _linear_parts(R0c)
    chi_sq = chi * chi
    a, a_sq, b1, b2 = [], [], [], []
    for k in range(4):
        inner = _CK[k] * rho + L[k]
        a_sq.append(chi_sq * inner)
        ak = chi * ComposeField(inner, "sqrt")
        ak.support = chi.support
        a.append(ak)
        d = DIRECTIONS[k + 1]
        pg = perp_grad(ak)
        b1.append((d.xi[0] * pg[0] + d.xi[1] * pg[1]) * (1.0 / d.norm_sq))
        b2.append((d.xi_perp[0] * pg[0] + d.xi_perp[1] * pg[1]) * (1.0 / d.norm_sq))
    return Coefficients(kappa, epsilon, chi, cn, gamma, rho, a, a_sq, b1, b2, R0c, hyp)


# --- projection on a periodic box -------------------------------------------------------

class BoxPotential(FieldExpr):
    """Periodic solution q of Laplace q = div F on [-L, L)^2 for compactly supported F.

    For each evaluation time the pure time-jet coefficients of F are
    sampled on an n x n grid, transformed, and inverted mode by mode.  The
    jet of q at arbitrary points is a trigonometric sum; space derivatives
    multiply by (i k)^alpha and time coefficients come from the time
    coefficients of F, so d_t and grad commute with the solve exactly.
    """

    def __init__(self, F: FieldExpr, half_width: float, n: int = 256, trim: float = 1e-14):
        if F.shape != (2,):
            raise ParameterError("BoxPotential expects a vector field")
        self.F = F
        self.Lh = float(half_width)
        self.n = int(n)
        self.trim = trim
        self.shape = ()
        self.support = Support.compact(self.Lh)
        self._cache = {}
        self.name = "box potential"

    def _spectrum(self, t: float, order: int):
        key = (float(t), order)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        for (tt, o), v in self._cache.items():
            if tt == float(t) and o >= order:
                return v
        n, L = self.n, 2 * self.Lh
        x = -self.Lh + L * np.arange(n) / n
        X, Y = np.meshgrid(x, x, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()])
        idx = {a: i for i, a in enumerate(multi_indices(order))}
        coeffs = []
        for c0 in range(0, pts.shape[1], 16384):
            j = self.F.jet(pts[:, c0:c0 + 16384], t, order)
            coeffs.append(np.stack([j.c[idx[(0, 0, m)]] for m in range(order + 1)]))
        Fg = np.concatenate(coeffs, axis=-1).reshape(order + 1, 2, n, n)
        Fh = np.fft.fft2(Fg, axes=(-2, -1))
        k = 2 * np.pi * np.fft.fftfreq(n, L / n)
        K1, K2 = np.meshgrid(k, k, indexing="ij")
        k2 = K1 ** 2 + K2 ** 2
        k2[0, 0] = 1.0
        qh = -1j * (K1 * Fh[:, 0] + K2 * Fh[:, 1]) / k2
        qh[:, 0, 0] = 0.0
        qh /= n * n
        # keep the square of modes carrying all but `trim` of the spectrum
        mag = np.abs(qh).max(axis=0) * (1 + np.sqrt(k2))
        thr = self.trim * max(mag.max(), 1e-300)
        big = np.nonzero(mag > thr)
        kk = np.fft.fftfreq(n, 1.0 / n)
        kmax = int(max(np.abs(kk[big[0]]).max(initial=0), np.abs(kk[big[1]]).max(initial=0)))
        sel = np.nonzero(np.abs(kk) <= kmax)[0]
        spec = (k[sel], qh[:, sel][:, :, sel])
        self._cache[key] = spec
        self.kmax = kmax
        return spec

    def _eval(self, ev, order):
        mi = multi_indices(order)
        out = np.zeros((len(mi), ev.n))
        for t in np.unique(ev.t):
            sel = np.nonzero(ev.t == t)[0]
            k, qh = self._spectrum(float(t), order)
            x = ev.x[:, sel] + self.Lh
            for c0 in range(0, sel.size, 2048):
                xs = x[:, c0:c0 + 2048]
                E1 = np.exp(1j * np.multiply.outer(xs[0], k))
                E2 = np.exp(1j * np.multiply.outer(xs[1], k))
                for i, a in enumerate(mi):
                    m1 = (1j * k) ** a[0] / factorial(a[0])
                    m2 = (1j * k) ** a[1] / factorial(a[1])
                    A = (E1 * m1) @ qh[a[2]]
                    out[i, sel[c0:c0 + 2048]] = np.real(np.sum(A * (E2 * m2), axis=1))
        return Jet(out, order)

    def boundary_gradient(self, t: float = 0.0, m: int = 256) -> float:
        """max |grad q| on the box boundary: the box-truncation indicator."""
        s = np.linspace(-self.Lh, self.Lh, m, endpoint=False)
        edge = np.concatenate([np.stack([s, np.full(m, -self.Lh)]),
                               np.stack([np.full(m, -self.Lh), s])], axis=1)
        j = self.jet(edge, t, 1)
        return float(np.sqrt(j.c[1] ** 2 + j.c[2] ** 2).max())


@dataclass
class LerayResult:
    field: FieldExpr          # f - grad q
    potential: BoxPotential
    box_error: float          # max |grad q| on the box boundary at t = 0

    def __call__(self, x, t=0.0):
        return self.field(x, t)


def leray_project(f: FieldExpr, half_width: float | None = None, n: int = 256) -> LerayResult:
    """Helmholtz projection of a compactly supported vector field on an enclosing box.

    The box has half-width 2 (K + 2) for supp f in [-K, K]^2 (side 4(K + 2)).
    """
    K = f.support.box if f.support.kind == "compact" else 1.0
    Lh = half_width if half_width is not None else 2.0 * (K + 2.0)
    q = BoxPotential(f, Lh, n)
    Pf = f - grad(q)
    return LerayResult(Pf, q, q.boundary_gradient(0.0))


# --- two-scale cell potential ------------------------------------------------------------

_H0 = lambda t: 1 - 10 * t ** 3 + 15 * t ** 4 - 6 * t ** 5
_H1 = lambda t: t - 6 * t ** 3 + 8 * t ** 4 - 3 * t ** 5
_H2 = lambda t: 0.5 * (t ** 2 - 3 * t ** 3 + 3 * t ** 4 - t ** 5)
_G0 = lambda t: 10 * t ** 3 - 15 * t ** 4 + 6 * t ** 5
_G1 = lambda t: -4 * t ** 3 + 7 * t ** 4 - 3 * t ** 5
_G2 = lambda t: 0.5 * (t ** 3 - 2 * t ** 4 + t ** 5)


class CellPoisson:
    """Periodic Q on the unit torus with Laplace Q = h1'(y1) h2(y2).

    Q = sum_{m >= 1} 2 Re[2 pi i m h1^(m) e^{2 pi i m y1}] K_m(y2), where
    K_m = G_m * h2 and G_m is the periodic Green's function of
    d^2 - (2 pi m)^2.  Off the support strip of h2 the convolution factors
    through two exponential moments of h2; inside the strip K_m and K_m'
    are tabulated by exponential recursions and read back with quintic
    Hermite interpolation (K'' = k^2 K + h2 closes the derivative ladder).
    """

    def __init__(self, h1: Concentrated, h2: Concentrated, tol: float = 1e-12,
                 mmax: int | None = None, ngrid: int = 512):
        self.h1, self.h2 = h1, h2
        mmax = mmax or int(160 * h1.mu)
        m = np.arange(1, mmax + 1, dtype=float)
        c = np.concatenate([h1.fourier(m[i:i + 4096]) for i in range(0, m.size, 4096)])
        wgt = m * np.abs(c)
        M = int(np.nonzero(wgt > tol * wgt.max())[0][-1]) + 1
        self.m, self.c1 = m[:M], c[:M]
        self.k = 2 * np.pi * self.m
        k = self.k
        self.center = h2.center
        self.s = 0.5 / h2.mu
        s = self.s
        self.em = np.exp(-k)
        self.norm = -1.0 / (2 * k * (1 - self.em))
        # exterior moments, each factor bounded by one
        g, w = gauss(64)
        edges = np.linspace(-s, s, 9)
        z = (edges[:-1, None] + np.diff(edges)[:, None] * g).ravel()
        wz = (np.diff(edges)[:, None] * w).ravel()
        hz = h2.derivs_local(z, 0)[0] * wz
        self.Hp = np.exp(np.multiply.outer(z - s, k)).T @ hz
        self.Hm = np.exp(-np.multiply.outer(z + s, k)).T @ hz
        self._build_interior(ngrid)

    def _build_interior(self, ng: int):
        s, k = self.s, self.k
        u = np.linspace(-s, s, ng + 1)
        du = u[1] - u[0]
        g, w = gauss(8)
        zs = u[:-1, None] + du * g                      # (ng, 8)
        hz = self.h2.derivs_local(zs, 0)[0] * (du * w)  # (ng, 8)

        def run(sign, k):
            # forward: I_j = int_{-s}^{u_j} h2 e^{sign k (u_j - z)} dz
            # backward: J_j = int_{u_j}^{s} h2 e^{sign k (z - u_j)} dz
            I = np.zeros((ng + 1, k.size))
            J = np.zeros((ng + 1, k.size))
            f = np.exp(sign * k * du)
            for j in range(ng):
                seg = np.exp(sign * np.multiply.outer(u[j + 1] - zs[j], k)).T @ hz[j]
                I[j + 1] = f * I[j] + seg
            for j in range(ng - 1, -1, -1):
                seg = np.exp(sign * np.multiply.outer(zs[j] - u[j], k)).T @ hz[j]
                J[j] = f * J[j + 1] + seg
            return I, J

        I, J = run(-1.0, k)
        small = np.nonzero(k * (1 - 2 * s) < 45.0)[0]
        Iw = np.zeros_like(I)
        Jw = np.zeros_like(J)
        if small.size:
            ks = k[small]
            Iw_s, Jw_s = run(1.0, ks)
            Iw[:, small] = Iw_s * np.exp(-ks)
            Jw[:, small] = Jw_s * np.exp(-ks)
        self.u = u
        self.du = du
        self.K0 = self.norm * (I + J + Iw + Jw)
        self.K1 = (I - J - Iw + Jw) / (2 * (1 - self.em))

    def _interior(self, uu, nder: int):
        """K^(b)(uu) for b <= nder at offsets inside the strip, shape (nder+1, n, M)."""
        k2 = self.k ** 2
        pos = (uu - self.u[0]) / self.du
        j = np.clip(np.floor(pos).astype(int), 0, len(self.u) - 2)
        t = (pos - j)[:, None]
        hh = self.du

        def herm(f0, f1, d0, d1, e0, e1):
            return (f0 * _H0(t) + hh * d0 * _H1(t) + hh ** 2 * e0 * _H2(t)
                    + f1 * _G0(t) + hh * d1 * _G1(t) + hh ** 2 * e1 * _G2(t))

        hu = self.h2.derivs_local(self.u, 2)
        K0a, K0b = self.K0[j], self.K0[j + 1]
        K1a, K1b = self.K1[j], self.K1[j + 1]
        K2a = k2 * K0a + hu[0][j][:, None]
        K2b = k2 * K0b + hu[0][j + 1][:, None]
        K3a = k2 * K1a + hu[1][j][:, None]
        K3b = k2 * K1b + hu[1][j + 1][:, None]
        out = [herm(K0a, K0b, K1a, K1b, K2a, K2b)]
        if nder >= 1:
            out.append(herm(K1a, K1b, K2a, K2b, K3a, K3b))
        hd = self.h2.derivs_local(uu, nder)
        for b in range(2, nder + 1):
            out.append(k2 * out[b - 2] + hd[b - 2][:, None])
        return np.stack(out)

    def _K(self, y2, nder: int):
        uu = ((np.asarray(y2, float) - self.center + 0.5) % 1.0) - 0.5
        n = uu.size
        out = np.empty((nder + 1, n, self.k.size))
        inside = np.abs(uu) < self.s
        o = ~inside
        if np.any(o):
            d0 = uu[o] % 1.0
            e1 = np.exp(-np.multiply.outer(d0 - self.s, self.k)) * self.Hp
            e2 = np.exp(-np.multiply.outer(1 - d0 - self.s, self.k)) * self.Hm
            for b in range(nder + 1):
                out[b, o] = self.norm * ((-self.k) ** b * e1 + self.k ** b * e2)
        if np.any(inside):
            out[:, inside] = self._interior(uu[inside], nder)
        return out

    def partials(self, y1, y2, order: int) -> dict:
        """{(a, b): d1^a d2^b Q} at the phase points (y1, y2)."""
        y1 = np.asarray(y1, float)
        y2 = np.asarray(y2, float)
        n = y1.size
        D = {(a, b): np.empty(n) for a in range(order + 1) for b in range(order + 1 - a)}
        tp = 2j * np.pi * self.m
        for c0 in range(0, n, 256):
            sl = slice(c0, c0 + 256)
            E = np.exp(np.multiply.outer(2j * np.pi * (y1[sl] % 1.0), self.m)) * self.c1
            K = self._K(y2[sl], order)
            for a in range(order + 1):
                A = 2.0 * np.real(E * tp ** (a + 1))
                for b in range(order + 1 - a):
                    D[(a, b)][sl] = np.sum(A * K[b], axis=1)
        return D

    def __call__(self, y1, y2):
        return self.partials(y1, y2, 0)[(0, 0)]


def _sum_fields(fs, shape):
    out = zero(shape)
    for f in fs:
        out = out + f
    return out


# --- time integrals ---------------------------------------------------------------------

def _split_modulated(f: FieldExpr):
    """Flatten f into (list of weighted modulated terms, list of weighted generic fields)."""
    terms, generic = [], []

    def walk(g, w):
        if g.is_zero():
            return
        if isinstance(g, ModulatedField):
            terms.extend(t.scaled(w) for t in g.terms)
        elif isinstance(g, SumField):
            for h, v in zip(g.fields, g.weights):
                walk(h, w * v)
        else:
            generic.append((w, g))

    walk(f, 1.0)
    return terms, generic


def _centered_profile(p):
    m = p.mean()
    if isinstance(p, Constant):
        return Constant(0.0), m
    return (p - m if abs(m) > 0 else p), m


@dataclass
class TimeIntegral:
    """V with d_t V = f + E exactly, V(0) = 0, and the smooth part of V for projection."""

    V: FieldExpr
    smooth: FieldExpr
    remainder: FieldExpr        # E (vanishes for f without moving patterns)


def time_integral(f: FieldExpr, J: int = 3, nodes: int = 32) -> TimeIntegral:
    """int_0^t f(x, s) ds for a sum of smooth fields and moving modulated terms.

    Smooth fields and the time-independent factors of modulated terms are
    integrated by Gauss-Legendre in s.  For a moving term
    c(x, t) P1(y1) P2(y2) M, the fluctuation P1 - mean is integrated by
    parts J times along y1 = lam (xi.x - omega t); the last integral,
    (-1)^(J-1) a^(-J) d_t^J c Q_J(y1) P2 M with a = -lam omega and Q_J
    the J-th mean-zero primitive, is returned as the remainder E.
    """
    shape = f.shape
    terms, generic = _split_modulated(f)
    smooth = _sum_fields([TimeIntegralField(_sum_fields([w * g for w, g in generic], shape), nodes)]
                         if generic else [], shape)
    V_terms, E_terms = [], []
    for tm in terms:
        c = tm.coef if tm.coef is not None else ConstantField(np.array(1.0))
        fr = tm.frame
        cint = TimeIntegralField(c, nodes)
        a = fr.A[0, T]
        if a == 0.0:
            V_terms.append(Term(cint, tm.p1, tm.p2, fr, tm.M))
            continue
        q0, m1 = _centered_profile(tm.p1)
        if m1 != 0.0:
            if isinstance(tm.p2, Constant):
                smooth = smooth + cint * ConstantField(m1 * tm.p2.value * tm.M)
            else:
                V_terms.append(Term(cint, Constant(m1), tm.p2, fr, tm.M))
        if q0.is_zero():
            continue
        fr0 = Frame(fr.direction, fr.lam, 0.0)
        Q, dc = q0, c
        for j in range(J):
            Q = Q.primitive()
            sgn = (-1.0) ** j / a ** (j + 1)
            V_terms.append(Term(dc, Q, tm.p2, fr, sgn * tm.M))
            V_terms.append(Term(FrozenTimeField(dc, 0.0), Q, tm.p2, fr0, -sgn * tm.M))
            dc = dc.diff(T)
        E_terms.append(Term(dc, Q, tm.p2, fr, (-1.0) ** (J - 1) / a ** J * tm.M))
    V = smooth + (ModulatedField(V_terms, shape) if V_terms else zero(shape))
    E = ModulatedField(E_terms, shape) if E_terms else zero(shape)
    return TimeIntegral(V, smooth, E)


# --- full perturbation -----------------------------------------------------------------------

@dataclass
class PerturbationBundle:
    params: ParamSet
    coeffs: Coefficients
    blocks: list                 # BlockFamily per direction
    H: list
    w: FieldExpr
    u_p: FieldExpr
    u_c: FieldExpr
    u_t: FieldExpr
    v: FieldExpr
    F_t: FieldExpr               # -sum a_k^2 Y_k before projection
    p_t: FieldExpr               # potential with u^t = F_t - grad p_t
    q_smooth: BoxPotential | None
    cells: list                  # CellPoisson per direction
    V: FieldExpr                 # int_0^t r0 ds before projection
    q_v: FieldExpr
    r_v: FieldExpr               # remainder d_t V - r0
    box_half_width: float
    diagnostics: dict
    energy: EnergyProfile

    @property
    def a(self):
        return self.coeffs.a

    @property
    def b1(self):
        return self.coeffs.b1

    @property
    def b2(self):
        return self.coeffs.b2

    @property
    def chi_kappa(self):
        return self.coeffs.chi

    @property
    def rho(self):
        return self.coeffs.rho

    @property
    def gamma_t(self):
        return self.coeffs.gamma


def assemble_perturbation(state: ReynoldsState, e: EnergyProfile, params: ParamSet,
                          coeffs: Coefficients | None = None, check: bool = True,
                          box_n: int = 256, cell_tol: float = 1e-12, J: int = 3) -> PerturbationBundle:
    """Build w, u^p, u^c, u^t and v for one step."""
    co = coeffs or assemble_coefficients(state, e, params, check=check)
    blocks = [make_blocks(k, params) for k in (1, 2, 3, 4)]
    lam, om, mu2 = params.lam, params.omega, params.mu2
    H, up, uc = [], [], []
    for i, bf in enumerate(blocks):
        d = bf.direction
        pr = bf.profiles
        Hk = ModulatedField([Term(co.a[i], pr["phi1"], pr["ddPhi2"], bf.frame,
                                  np.array(-1.0 / (lam * mu2) / d.norm))], ())
        H.append(Hk)
        up.append(bf.Wp.times(co.a[i]))
        uc.append(bf.Wc.times(co.a[i]) + bf.Wcc_par.times(co.b1[i]) + bf.Wcc_perp.times(co.b2[i]))
    w = _sum_fields([perp_grad(h) for h in H], (2,))
    u_p = _sum_fields(up, (2,))
    u_c = _sum_fields(uc, (2,))

    # time corrector: F = -sum a_k^2 Y_k = mean part + oscillation
    Lh = 2.0 * (co.kappa + 2.0)
    F = _sum_fields([bf.Y.times(co.a_sq[i]) * -1.0 for i, bf in enumerate(blocks)], (2,))
    Fbar = _sum_fields([co.a_sq[i] * ConstantField(-bf.y_mean) for i, bf in enumerate(blocks)], (2,))
    Fbar.support = Support.compact(co.kappa + 1.0)
    q_s = BoxPotential(Fbar, Lh, box_n)
    cells, q_osc = [], []
    for i, bf in enumerate(blocks):
        cp = CellPoisson(bf.profiles["phi1_sq"], bf.profiles["phi2_sq"], tol=cell_tol)
        cells.append(cp)
        Qf = CellField(cp.partials, bf.frame, f"Q_{bf.k}")
        q_osc.append(co.a_sq[i] * Qf * (1.0 / (om * lam)))
    p_t = q_s + _sum_fields(q_osc, ())
    u_t = F - grad(p_t)

    # time integral of r0
    if state.r.is_zero():
        V = zero((2,))
        q_v = zero()
        r_v = zero((2,))
        v = zero((2,))
    else:
        ti = time_integral(state.r, J)
        V = ti.V
        r_v = ti.remainder
        sm = ti.smooth
        if sm.is_zero():
            q_v = zero()
        else:
            sm.support = Support.compact(Lh)
            q_v = BoxPotential(sm, Lh, box_n)
        v = V - grad(q_v) if not q_v.is_zero() else V
    diag = {"box_half_width": Lh, "cell_modes": [len(c.m) for c in cells]}
    return PerturbationBundle(params, co, blocks, H, w, u_p, u_c, u_t, v, F, p_t, q_s, cells,
                              V, q_v, r_v, Lh, diag, e)
