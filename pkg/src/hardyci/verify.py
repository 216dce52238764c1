"""Identity suite: every algebraic identity of one step checked at sample points.

Each check evaluates both sides of an identity from independent
expressions (derivatives come from the jet calculus, never from the
operator that produced the left side) and reports the relative residual
max |lhs - rhs| / max(|lhs|, |rhs|) over the samples.  Samples are drawn by
the phase sampler so that most of them fall on the thin block supports.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from .antidiv import AntidivError, div_inv_torus, s_n, s_tilde_n, separable_div_inv
from .blocks import make_blocks, verify_disjointness
from .error import _second_primitive, _BLOCK_SPEC, assemble_new_error, defect_residual, sample_grid
from .fields import ComposeField, Coordinate, div, grad, stack, zero
from .geometry import GeometryError, gamma_decompose, reconstruct
from .jets import T
from .params import ParamSet
from .perturbation import (EnergyProfile, ReynoldsState, assemble_coefficients, assemble_perturbation,
                           leray_project, zero_state)
from .antidiv import mat_antidiv
from .sampling import PhaseSampler

__all__ = ["IdentityCheck", "run_identity_suite", "suite_ok"]


@dataclass
class IdentityCheck:
    name: str
    residual: float
    tol: float
    samples: int
    passed: bool
    detail: str = ""
    seconds: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


def _rel(lhs, rhs) -> float:
    lhs, rhs = np.asarray(lhs), np.asarray(rhs)
    scale = max(float(np.abs(lhs).max()), float(np.abs(rhs).max()), 1e-300)
    return float(np.abs(lhs - rhs).max()) / scale


def _points(params: ParamSet, K: float, n: int, seed: int):
    rng = np.random.default_rng(seed)
    ts = rng.uniform(0.0, 1.0, 4)
    xs, tt = [], []
    for j, t in enumerate(ts):
        smp = PhaseSampler(params, K, t)
        m = n // len(ts) + (1 if j < n % len(ts) else 0)
        xs.append(smp.draw(rng, m))
        tt.append(np.full(m, t))
    return np.concatenate(xs, axis=1), np.concatenate(tt)


def _gauss_field(scale: float = 1.0, c=(0.2, -0.1)):
    x1, x2 = Coordinate(0) - c[0], Coordinate(1) - c[1]
    return ComposeField(-scale * (x1 * x1 + x2 * x2), "exp")


def _torus_field():
    two_pi = 2 * np.pi
    s1 = ComposeField(two_pi * Coordinate(0), "sin")
    c2 = ComposeField(two_pi * Coordinate(1), "cos")
    s12 = ComposeField(two_pi * (Coordinate(0) + 2.0 * Coordinate(1)), "sin")
    u = stack([s1 * c2 + s12, c2 + 0.5 * s12])
    u.periodic = True
    return u


def run_identity_suite(params: ParamSet | None = None, n: int = 1000, seed: int = 0,
                       tol: float = 1e-7, inject: str | None = None, defect: bool = True) -> list:
    """All identity checks; `inject="psi_chain"` corrupts the A/B second primitive."""
    P = params or ParamSet.desk(8, 64.0)
    out = []

    def record(name, fn, tol_=tol):
        tic = time.perf_counter()
        try:
            res, m, detail = fn()
            ok = res <= tol_
        except (AntidivError, GeometryError) as exc:
            res, m, detail, ok = float("inf"), 0, f"{type(exc).__name__}: {exc}", False
        out.append(IdentityCheck(name, res, tol_, m, bool(ok), detail, time.perf_counter() - tic))

    e = EnergyProfile.constant(1.0)
    co = assemble_coefficients(zero_state(P.delta), e, P)
    K = co.kappa + 1.0
    x, t = _points(P, K, n, seed)
    blocks = [make_blocks(k, P) for k in (1, 2, 3, 4)]
    f = _gauss_field()

    # div of the torus inverse
    def torus():
        u = _torus_field()
        R = div_inv_torus(u, 64)
        rng = np.random.default_rng(seed + 1)
        y = rng.uniform(0, 1, (2, n))
        return _rel(div(R)(y, 0.0), u(y, 0.0)), n, "periodic spectral inverse, 64^2 modes"
    record("div div^-1 = id (torus)", torus)

    def separable():
        worst = 0.0
        for bf in blocks:
            for pat in (bf.y_pattern(), bf.quad_pattern().dot_const(np.array([1.0, 0.0])),
                        bf.quad_pattern().dot_const(np.array([0.0, 1.0]))):
                R = separable_div_inv(pat)
                worst = max(worst, _rel(div(R)(x, t), pat(x, t)))
        return worst, n, "block patterns, 4 directions"
    record("div div^-1 = id (separable)", separable)

    for N in (1, 2, 3):
        def sn(N=N):
            worst = 0.0
            for bf in blocks[:2]:
                u = bf.y_pattern()
                res = s_n(f, u, N)
                worst = max(worst, _rel((res.r + div(res.R))(x, t), (u.times(f))(x, t)))
                Tp = bf.quad_pattern()
                res = s_tilde_n(grad(f), Tp, N)
                rhs = stack([Tp.dot_const(np.array([1.0, 0.0])).times(f.diff(0))[0]
                             + Tp.dot_const(np.array([0.0, 1.0])).times(f.diff(1))[0],
                             Tp.dot_const(np.array([1.0, 0.0])).times(f.diff(0))[1]
                             + Tp.dot_const(np.array([0.0, 1.0])).times(f.diff(1))[1]])
                worst = max(worst, _rel((res.r + div(res.R))(x, t), rhs(x, t)))
            return worst, n, "S_N and S~_N"
        record(f"r_N + div R_N = f u (N={N})", sn)

    def ab():
        worst = 0.0
        for bf in blocks:
            for name, (kind, p1n, p2n) in _BLOCK_SPEC.items():
                pr = bf.profiles
                Psi = _second_primitive(pr[p2n], P.mu2, p2n)
                if inject == "psi_chain":
                    Psi = Psi * 1.01
                M = mat_antidiv(kind, pr[p1n].derivative(), pr[p2n], Psi, bf.direction, P.lam, P.omega)
                vec = bf.direction.xi if kind == "A" else bf.direction.xi_perp
                rhs = pr[p1n].derivative()(bf.frame.phases(x, t)[0]) * pr[p2n](bf.frame.phases(x, t)[1])
                worst = max(worst, _rel(div(M)(x, t), np.outer(vec, rhs)))
        return worst, n, "A and B tensors, 4 blocks x 4 directions"
    record("div A / div B", ab)

    def w_div():
        worst = 0.0
        for bf in blocks:
            W = bf.Wp + bf.Wc
            scale = float(np.abs(bf.Wp.diff(0)(x, t)).max())
            worst = max(worst, float(np.abs(div(W)(x, t)).max()) / scale)
        return worst, n, "relative to max |d_1 W^p|"
    record("div(W^p + W^c) = 0", w_div)

    def wwy():
        worst = 0.0
        for bf in blocks:
            from .fields import outer
            lhs = div(outer(bf.Wp, bf.Wp))(x, t)
            worst = max(worst, _rel(lhs, bf.Y.diff(T)(x, t)))
        return worst, n, ""
    record("div(W^p (x) W^p) = d_t Y", wwy)

    def rcoeff():
        g = _gauss_field(1.5)
        R = stack([0.02 * g, 0.01 * g, 0.01 * g, -0.01 * g], (2, 2))
        st = ReynoldsState(zero((2,)), zero(), R, zero((2,)), zero_state().energy, 0, P.delta,
                           {"R_L1": 0.0, "r_L2": 0.0, "u_L2": 0.0})
        c2 = assemble_coefficients(st, e, P, check=False, kappa=co.kappa)
        rng = np.random.default_rng(seed + 2)
        y = rng.uniform(-K, K, (2, n))
        tt = rng.uniform(0, 1, n)
        lhs = sum(np.multiply.outer(np.outer(blocks[k].direction.hat, blocks[k].direction.hat),
                                    c2.a_sq[k](y, tt)) for k in range(4))
        chi2 = (c2.chi * c2.chi)(y, tt)
        rhs = chi2 * (c2.rho(y, tt) * np.eye(2)[:, :, None] + c2.R0c(y, tt))
        return _rel(lhs, rhs), n, "synthetic traceless R0"
    record("sum a_k^2 xh_k (x) xh_k = chi^2 (rho I + R0c)", rcoeff)

    def gam():
        rng = np.random.default_rng(seed + 3)
        D = rng.normal(size=(n, 2, 2))
        D = 0.5 * (D + np.swapaxes(D, 1, 2))
        D *= (0.124 * rng.uniform(0, 1, n) / np.linalg.norm(D, axis=(1, 2)))[:, None, None]
        A = np.eye(2) + D
        g = gamma_decompose(A)
        return _rel(reconstruct(g.gamma ** 2), A), n, ""
    record("Gamma reconstruction", gam)

    def leray():
        g = _gauss_field(4.0)
        F = stack([g * Coordinate(1), -0.5 * g + g * Coordinate(0)])
        F.support = type(F.support).compact(2.5)
        L1 = leray_project(F, half_width=6.0, n=128)
        L2 = leray_project(L1.field, half_width=6.0, n=128)
        rng = np.random.default_rng(seed + 4)
        y = rng.uniform(-5, 5, (2, n))
        return _rel(L2.field(y, 0.0), L1.field(y, 0.0)), n, "box half-width 6, 128^2 modes"
    record("Leray idempotence", leray)

    def disjoint():
        rep = verify_disjointness(P, np.linspace(0, 1, 8, endpoint=False), co.kappa)
        return (0.0 if rep.disjoint else float("inf")), 8, (f"min gap {rep.min_gap:.3g} vs required "
                                                             f"{rep.required_gap:.3g}, pair {rep.worst_pair[:2]}")
    record("disjoint supports", disjoint, 0.0)

    if defect:
        def dfct():
            st0 = zero_state(P.delta)
            b = assemble_perturbation(st0, e, P, check=False)
            st1, _ = assemble_new_error(st0, b, P)
            rep = defect_residual(st1, st0, P, grid=sample_grid(P, co.kappa, n=4, nt=2, seed=seed))
            return rep.relative, rep.points, f"largest term {rep.worst_term}"
        record("defect equation (one step)", dfct, 1e-4)
    return out


def suite_ok(checks) -> bool:
    return all(c.passed for c in checks)
