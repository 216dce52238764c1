"""The new Reynolds error after one perturbation step.

With u1 = u0 + w + u^t + v the pieces are

    R_lin1 = u0 (x) (u1-u0) + (u1-u0) (x) u0,
    R_lin2 = z (x) u^p + u^p (x) z,   z = u1 - u0 - u^p,
    R_lin3 = z (x) z,
    R_kappa = chi^2 R0c - R0c,
    (r_quad, R_quad) = sum_k S~_N(grad a_k^2, W^p (x) W^p - xh (x) xh),
    (r_Y1, R_Y) = -sum_k S_N(d_t a_k^2, Y_k - mean),  r_Y2 = -sum_k d_t a_k^2 mean(Y_k),
    R_time, r_time: per block, d_t(c W) = S_N(d_t c, W) + div(c T) - S~_N(grad c, T)
                    with div T = d_t W written through the explicit A/B tensors,

and R1 = -(sum of R pieces), r1 = -(r_quad + r_Y + r_time + r_v),
p1 = p0 - pi1 - pi2 + tr(R1)/2, pi1 = -d_t p^t + chi^2 rho, pi2 = -d_t q_v.
r_v is the integration-by-parts remainder of the time integral in v.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .antidiv import mat_antidiv, s_n, s_tilde_n
from .fields import (ConstantField, Evaluator, FieldExpr, ModulatedField, TimeFunction, div, grad,
                     outer, stack, trace, traceless, zero)
from .jets import T, X1, X2
from .params import ParamSet
from .perturbation import PerturbationBundle, ReynoldsState, _sum_fields
from .profiles import make_base_profiles, periodize

__all__ = ["ErrorBreakdown", "AssemblyError", "assemble_new_error", "time_tensor",
           "defect_residual", "DefectReport", "norm_report", "NormRow", "write_norm_report"]


class AssemblyError(RuntimeError):
    """The assembled state misses the defect equation beyond tolerance."""


@dataclass
class ErrorBreakdown:
    R_lin1: FieldExpr
    R_lin2: FieldExpr
    R_lin3: FieldExpr
    R_kappa: FieldExpr
    R_quad: FieldExpr
    R_Y: FieldExpr
    R_time: FieldExpr
    r_quad: FieldExpr
    r_Y1: FieldExpr
    r_Y2: FieldExpr
    r_time: list                 # r_time_i, i = 1..8
    R_time_parts: list           # R_time_i, i = 1..8
    R_time_tilde: list           # the four c T tensors, in the order 2, 4, 6, 8
    r_v: FieldExpr
    pi1: FieldExpr
    pi2: FieldExpr
    N: int
    meta: dict = field(default_factory=dict)

    def R_pieces(self) -> dict:
        return {"R_lin1": self.R_lin1, "R_lin2": self.R_lin2, "R_lin3": self.R_lin3,
                "R_kappa": self.R_kappa, "R_quad": self.R_quad, "R_Y": self.R_Y,
                "R_time": self.R_time}

    def r_pieces(self) -> dict:
        out = {"r_quad": self.r_quad, "r_Y1": self.r_Y1, "r_Y2": self.r_Y2}
        out.update({f"r_time_{i + 1}": r for i, r in enumerate(self.r_time)})
        out["r_v"] = self.r_v
        return out

    @property
    def r_total(self) -> FieldExpr:
        return _sum_fields(list(self.r_pieces().values()), (2,))

    @property
    def R_total(self) -> FieldExpr:
        return _sum_fields(list(self.R_pieces().values()), (2, 2))


# --- time tensors ----------------------------------------------------------------

_BASE = None


def _second_primitive(p2, mu2: float, which: str):
    """Psi with Psi'' = p2 for the two y2 profiles used by the blocks."""
    global _BASE
    if _BASE is None:
        _BASE = make_base_profiles()
    Phi, _, chain = _BASE
    base = chain[0] if which == "phi2" else Phi
    return periodize(base, mu2) * mu2 ** -2


_BLOCK_SPEC = {
    # block: (kind, profile names (P1, P2), name of P2 for the second primitive)
    "Wp": ("A", "phi1", "phi2"),
    "Wc": ("B", "dphi1", "ddPhi2"),
    "Wcc_par": ("A", "phi1", "ddPhi2"),
    "Wcc_perp": ("B", "phi1", "ddPhi2"),
}


def time_tensor(bf, name: str, check: bool = True) -> ModulatedField:
    """T with div T = d_t W for the block `name` of the family bf (T is a pattern)."""
    kind, p1n, p2n = _BLOCK_SPEC[name]
    pr = bf.profiles
    P = bf.params
    W = getattr(bf, name)
    cw = float(np.dot(W.terms[0].M, bf.direction.hat if kind == "A" else bf.direction.hat_perp))
    Psi = _second_primitive(pr[p2n], P.mu2, p2n)
    M = mat_antidiv(kind, pr[p1n].derivative(), pr[p2n], Psi, bf.direction, P.lam, P.omega,
                    check=check)
    return M * (-P.lam * P.omega * cw / bf.direction.norm)


# --- assembly ---------------------------------------------------------------------

def assemble_new_error(state0: ReynoldsState, bundle: PerturbationBundle, params: ParamSet,
                       N: int | None = None, check: bool = False, check_grid=None,
                       tol: float = 1e-4):
    """(state1, ErrorBreakdown) for the perturbation bundle of state0.

    N defaults to min(params.N, 2): S_N carries 2^N terms per component and
    at desk scale the N = 2 tail is far below every other error.
    """
    N = min(params.N, 2) if N is None else N
    B = bundle
    co = B.coeffs
    u0 = state0.u
    up = B.u_p
    du = B.w + B.u_t + B.v
    z = B.u_c + B.u_t + B.v
    R_lin1 = outer(u0, du) + outer(du, u0) if not u0.is_zero() else zero((2, 2))
    R_lin2 = outer(z, up) + outer(up, z)
    R_lin3 = outer(z, z)
    chi_sq = co.chi * co.chi
    R_kappa = zero((2, 2)) if co.R0c.is_zero() else chi_sq * co.R0c - co.R0c

    R_quad, r_quad, R_Y, r_Y1, r_Y2 = [], [], [], [], []
    r_time = [[] for _ in range(8)]
    R_time = [[] for _ in range(8)]
    R_tilde = [[] for _ in range(4)]
    for i, bf in enumerate(B.blocks):
        a, a2 = co.a[i], co.a_sq[i]
        res = s_tilde_n(grad(a2), bf.quad_pattern(), N)
        r_quad.append(res.r)
        R_quad.append(res.R)
        da2 = a2.diff(T)
        res = s_n(da2, bf.y_pattern(), N)
        r_Y1.append(-1.0 * res.r)
        R_Y.append(-1.0 * res.R)
        r_Y2.append(da2 * ConstantField(-bf.y_mean))
        coefs = (a, a, co.b1[i], co.b2[i])
        for j, name in enumerate(("Wp", "Wc", "Wcc_par", "Wcc_perp")):
            c = coefs[j]
            W = getattr(bf, name)
            res = s_n(c.diff(T), W, N)
            r_time[2 * j].append(res.r)
            R_time[2 * j].append(res.R)
            Tt = time_tensor(bf, name)
            R_tilde[j].append(Tt.times(c))
            res = s_tilde_n(grad(c), Tt, N)
            r_time[2 * j + 1].append(-1.0 * res.r)
            R_time[2 * j + 1].append(-1.0 * res.R)

    S2 = lambda fs: _sum_fields(fs, (2,))
    S22 = lambda fs: _sum_fields(fs, (2, 2))
    R_time_parts = [S22(x) for x in R_time]
    R_tilde_f = [S22(x) for x in R_tilde]
    R_time_f = S22(R_time_parts + R_tilde_f)
    pi1 = -1.0 * B.p_t.diff(T) + chi_sq * co.rho
    pi2 = zero() if B.q_v.is_zero() else -1.0 * B.q_v.diff(T)
    bd = ErrorBreakdown(R_lin1, R_lin2, R_lin3, R_kappa, S22(R_quad), S22(R_Y), R_time_f,
                        S2(r_quad), S2(r_Y1), S2(r_Y2), [S2(x) for x in r_time], R_time_parts,
                        R_tilde_f, B.r_v, pi1, pi2, N)
    R1 = -1.0 * bd.R_total
    r1 = -1.0 * bd.r_total
    p1 = state0.p - pi1 - pi2 + 0.5 * trace(R1)
    u1 = u0 + du
    state1 = ReynoldsState(u1, p1, R1, r1, _energy_after(state0, bundle), state0.step + 1,
                           params.delta, {}, {"N": N, "kappa": co.kappa})
    if check:
        rep = defect_residual(state1, state0, params, grid=check_grid)
        bd.meta["defect"] = rep
        if rep.relative > tol:
            raise AssemblyError(f"defect residual {rep.relative:.3e} exceeds {tol:g}; "
                                f"largest term {rep.worst_term}")
    return state1, bd


def _energy_after(state0: ReynoldsState, bundle: PerturbationBundle) -> TimeFunction:
    """Designed energy of u1: e (1 - delta/2) plus the epsilon floor 20 eps ||chi||^2."""
    co = bundle.coeffs
    e = bundle.energy
    delta = bundle.params.delta
    add = 20.0 * co.epsilon * co.chi_sq_norm

    def derivs(t, n):
        d = e.derivs(t, n) * (1 - delta / 2)
        d[0] = d[0] + add
        return d

    return TimeFunction(derivs, "E1")


# --- defect residual -------------------------------------------------------------------

@dataclass
class DefectReport:
    relative: float
    absolute: float
    scale: float
    worst_term: str
    term_max: dict
    div_u: float
    div_u_relative: float
    trace_R: float
    points: int

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def sample_grid(params: ParamSet, kappa: int, n: int = 16, nt: int = 8, seed: int = 0):
    """n x n x nt space-time grid on [-(kappa+1), kappa+1]^2 x [0, 1], jittered off lattice points."""
    K = kappa + 1.0
    rng = np.random.default_rng(seed)
    g = np.linspace(-K, K, n)
    X, Y = np.meshgrid(g, g, indexing="ij")
    ts = (np.arange(nt) + 0.5) / nt
    x = np.tile(np.stack([X.ravel(), Y.ravel()]), nt)
    x = x + rng.uniform(-0.5, 0.5, x.shape) * (2 * K / n)
    t = np.repeat(ts, n * n)
    return x, t


def defect_residual(state1: ReynoldsState, state0: ReynoldsState, params: ParamSet,
                    grid=None, chunk: int = 256) -> DefectReport:
    """d_t u1 + div(u1 (x) u1) + grad p1 + r1 + div R1c on sample points.

    Each term is evaluated from first-order jets; the relative residual is
    the sup norm of the sum divided by the largest sup norm of a single term.
    """
    if grid is None:
        kappa = int(state1.meta.get("kappa", params.kappa))
        grid = sample_grid(params, kappa)
    x, t = grid
    u1, p1, R1, r1 = state1.u, state1.p, state1.R, state1.r
    terms = {"dt_u": u1.diff(T), "div_uu": div(outer(u1, u1)), "grad_p": grad(p1),
             "r": r1, "div_R": div(traceless(R1))}
    tot = np.zeros((2, x.shape[1]))
    mx = {}
    dv = np.zeros(x.shape[1])
    trR = np.zeros(x.shape[1])
    divu = div(u1)
    gu = stack([u1.diff(X1), u1.diff(X2)], (2, 2))
    gmax = 0.0
    Rc = traceless(R1)
    for c0 in range(0, x.shape[1], chunk):
        sl = slice(c0, c0 + chunk)
        ev = Evaluator(x[:, sl], t[sl])
        for k, f in terms.items():
            v = f.jet(None, None, 0, ev).val
            tot[:, sl] += v
            mx[k] = max(mx.get(k, 0.0), float(np.abs(v).max()))
        dv[sl] = divu.jet(None, None, 0, ev).val
        gmax = max(gmax, float(np.abs(gu.jet(None, None, 0, ev).val).max()))
        rv = Rc.jet(None, None, 0, ev).val
        trR[sl] = rv[0, 0] + rv[1, 1]
    scale = max(max(mx.values()), 1e-300)
    absr = float(np.abs(tot).max())
    return DefectReport(absr / scale, absr, scale, max(mx, key=mx.get), mx, float(np.abs(dv).max()),
                        float(np.abs(dv).max()) / max(gmax, 1e-300), float(np.abs(trR).max()),
                        x.shape[1])


# --- norm report -----------------------------------------------------------------------

def _exponents(alpha: float, beta: float, N: int) -> dict:
    """Predicted lam-exponents (mu1 = lam^alpha, mu2 = lam^(1+alpha), omega = lam^beta).

    R_lin1 and R_lin2 come in two forms: the displayed bound without the
    mu1/mu2 corrector term and the bound carried through the proof with it.
    """
    energy = -alpha / 3 - 1.0 / 6
    transport = -beta + alpha + 0.5
    lin = max(energy, transport)
    return {
        "R_lin1": (lin, max(lin, -1.0)),
        "R_lin2": (max(lin, -1.0), max(lin, -1.0)),
        "R_lin3": (max(-2.0, 2 * transport),) * 2,
        "R_kappa": (0.0, 0.0),
        "R_quad": (-1.0, -1.0),
        "R_Y": (-beta - 1.0,) * 2,
        "R_time": (beta - alpha - 1.5,) * 2,
        "r_quad": (2 * alpha + 1 - N,) * 2,
        "r_Y": (-beta + 2 * alpha + 1 - N,) * 2,
        "r_time": (max(alpha + 0.5 - N, beta + alpha - 0.5 - N),) * 2,
    }


_ORDERS = {
    "R_lin1": "mu1^(-1/6) mu2^(-1/6) + mu1^(1/2) mu2^(1/2) / omega",
    "R_lin2": "mu1/mu2 + mu1^(-1/6) mu2^(-1/6) + mu1^(1/2) mu2^(1/2) / omega",
    "R_lin3": "(mu1/mu2)^2 + (mu1^(1/2) mu2^(1/2) / omega)^2",
    "R_kappa": "eta/2",
    "R_quad": "1/lam",
    "R_Y": "1/(omega lam)",
    "R_time": "omega mu1^(1/2) mu2^(-3/2)",
    "r_quad": "lam^(-N) mu1 mu2",
    "r_Y": "lam^(-N) mu1 mu2 / omega",
    "r_time": "lam^(-N) mu1^(1/2) mu2^(1/2) + omega lam^(-N) mu1^(3/2) mu2^(-1/2)",
}


@dataclass
class NormRow:
    name: str
    norm: str
    anchor: str                  # quantity label: "<piece> in <norm>"
    order: str                   # predicted order as a monomial in lam, mu1, mu2, omega
    exponent: float              # predicted lam-exponent, displayed form
    exponent_alt: float          # predicted lam-exponent, form carried through the estimate
    value: float                 # max over the t-grid
    stderr: float
    bound: float | None = None   # absolute bound where one applies (R_kappa, r1 in L^2)
    ok: bool | None = None


def norm_report(bd: ErrorBreakdown, state1: ReynoldsState, params: ParamSet, t_grid=(0.25, 0.5, 0.75),
                n: int = 2048, seed: int = 0, K: float | None = None) -> list:
    """L^1 norms of the R pieces and sampled sup norms of the r pieces, maximized over t_grid."""
    from .sampling import PhaseSampler, mc_norm
    kappa = int(state1.meta.get("kappa", params.kappa))
    K = kappa + 1.0 if K is None else K
    ex = _exponents(params.alpha, params.beta, bd.N)
    samplers = {t: PhaseSampler(params, K, t) for t in t_grid}

    def tmax(f, s):
        best, err = 0.0, 0.0
        for j, t in enumerate(t_grid):
            v = mc_norm(f, s, params, K, t, n, seed + j, samplers[t])
            if v.value >= best:
                best, err = v.value, v.stderr
        return best, err

    rows = []
    for name, f in bd.R_pieces().items():
        v, e = tmax(f, 1.0)
        row = NormRow(name, "L1", f"{name} in L1", _ORDERS[name], *ex[name], v, e)
        if name == "R_kappa":
            row.bound = params.eta / 2
            row.ok = v <= row.bound
        rows.append(row)
    groups = {"r_quad": [bd.r_quad], "r_Y": [bd.r_Y1, bd.r_Y2], "r_time": list(bd.r_time)}
    for name, fs in groups.items():
        v, e = tmax(_sum_fields(fs, (2,)), np.inf)
        rows.append(NormRow(name, "Linf", f"{name} in Linf", _ORDERS[name], *ex[name], v, e))
    r1 = state1.r
    v2, e2 = tmax(r1, 2.0)
    vi, _ = tmax(r1, np.inf)
    Ck = 2 * K                   # |supp r1|^(1/2) <= |[-K, K]^2|^(1/2)
    rows.append(NormRow("r1", "L2", "r1 in L2 vs C(kappa) r1 in Linf", "C(kappa) ||r1||_inf",
                        float("nan"), float("nan"), v2, e2, Ck * vi, v2 <= Ck * vi + 3 * e2))
    return rows


def write_norm_report(rows, out_dir, stem: str = "norms") -> tuple:
    """Write rows as <stem>.csv and <stem>.json; returns both paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = list(NormRow.__dataclass_fields__)
    pc, pj = out / f"{stem}.csv", out / f"{stem}.json"
    with open(pc, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([getattr(r, c) for c in cols])
    with open(pj, "w") as fh:
        json.dump([{c: getattr(r, c) for c in cols} for r in rows], fh, indent=1, sort_keys=True)
    return pc, pj
