"""Two-scale (homogenized) norms for the parameter sweep.

At the scheduled exponents mu1 = lam^alpha and mu2 = lam^(1+alpha) the
phases reach lam^(2+beta) and pointwise evaluation in double precision
loses the block supports already at lam = 32.  Every quantity of the
sweep is a sum of terms c(x) P1(y1) P2(y2) M with slow coefficients and
fast phases; in the two-scale limit its L^s norm is

    ( int_{R^2} < |sum_t c_t(x) P1_t(y1) P2_t(y2) M_t|^s >_y dx )^(1/s),

with < >_y the mean over the periodic cell.  Cell means are computed in
the local variables of the concentrated profiles, which stay accurate
for any mu, and the slow integral by tensor Gauss-Legendre.  Different
directions have independent phases, so squared L^2 norms add over k;
L^1 norms are reported as sums over k (an upper bound).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocks import make_blocks, support_lattice
from .error import time_tensor
from .fields import Evaluator, ModulatedField, _cell_rule, grad
from .hardy import calibrate
from .jets import T
from .params import ParamSet
from .perturbation import EnergyProfile, assemble_coefficients, zero_state
from .antidiv import s_n, s_tilde_n
from .profiles import gauss

QUANTITIES = ("u_c_L2", "u_t_L2", "R_quad_L1", "R_time_L1", "curl_w_atom", "energy_excess")

__all__ = ["QUANTITIES", "TwoScaleEngine", "SweepPoint", "sweep", "fit_slope", "PREDICTED"]


def fit_slope(lams, values) -> tuple:
    """Least-squares slope and intercept of log(value) against log(lam)."""
    lx = np.log(np.asarray(lams, float))
    ly = np.log(np.asarray(values, float))
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    (s, b), res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    r = float(np.sqrt(res[0] / len(lx))) if res.size else 0.0
    return float(s), float(b), r


def PREDICTED(alpha: float, beta: float, p: float) -> dict:
    """lam-exponents of the swept quantities after mu1 = lam^alpha, mu2 = lam^(1+alpha), omega = lam^beta."""
    return {
        "u_c_L2": -1.0,
        "u_t_L2": -beta + alpha + 0.5,
        "R_quad_L1": -1.0,
        "R_time_L1": beta - alpha - 1.5,
        "curl_w_atom": 2.5 + alpha * (2 - 2 / p),
        "energy_excess": -alpha / 3 - 1.0 / 6,
    }


class TwoScaleEngine:
    """Homogenized norms of the perturbation and error pieces at one parameter set."""

    def __init__(self, params: ParamSet, e: EnergyProfile | None = None, t: float = 0.5,
                 panels: int = 8, nodes: int = 4, N: int = 2):
        self.params = params
        self.t = float(t)
        self.N = N
        e = e or EnergyProfile.constant(1.0)
        self.co = assemble_coefficients(zero_state(params.delta), e, params)
        self.blocks = [make_blocks(k, params) for k in (1, 2, 3, 4)]
        K = self.co.kappa + 1.0
        edges = np.linspace(-K, K, panels + 1)
        g, w = gauss(nodes)
        xs = (edges[:-1, None] + np.diff(edges)[:, None] * g).ravel()
        ws = (np.diff(edges)[:, None] * w).ravel()
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        self.x = np.stack([X.ravel(), Y.ravel()])
        self.wx = np.multiply.outer(ws, ws).ravel()
        self.ev = Evaluator(self.x, np.full(self.x.shape[1], self.t))

    # --- coefficient and profile helpers ------------------------------------------
    def coef(self, c):
        if c is None:
            return np.ones(self.x.shape[1])
        return c.jet(None, None, 0, self.ev).val

    def _terms(self, F: ModulatedField):
        out = []
        for tm in F.terms:
            out.append((self.coef(tm.coef), tm.p1, tm.p2, tm.M.ravel()))
        return out

    @staticmethod
    def _mean2(p, q, which):
        y1, w1, y2, w2 = _cell_rule([p, q], [p, q], 2)
        y, w = (y1, w1) if which == 1 else (y2, w2)
        return float(np.sum(w * p(y) * q(y)))

    # --- norms ---------------------------------------------------------------------
    def l2_squared(self, F: ModulatedField, skip_diagonal_of=None) -> float:
        """int < |F|^2 >_y dx by the separable bilinear formula."""
        tl = self._terms(F)
        total = 0.0
        for i, (ci, p1, p2, Mi) in enumerate(tl):
            for j, (cj, q1, q2, Mj) in enumerate(tl):
                mm = float(Mi @ Mj)
                if mm == 0.0:
                    continue
                if skip_diagonal_of is not None and i in skip_diagonal_of and j in skip_diagonal_of:
                    continue
                m1 = self._mean2(p1, q1, 1)
                m2 = self._mean2(p2, q2, 2)
                total += float(np.sum(self.wx * ci * cj)) * m1 * m2 * mm
        return total

    def ls(self, F: ModulatedField, s: float = 1.0, chunk: int = 128) -> float:
        """(int < |F|^s >_y dx)^(1/s) with the pointwise Euclidean/Frobenius norm."""
        tl = self._terms(F)
        if not tl:
            return 0.0
        y1, w1, y2, w2 = _cell_rule([t[1] for t in tl], [t[2] for t in tl], 1)
        A = np.stack([t[1](y1) for t in tl])           # (T, n1)
        B = np.stack([t[2](y2) for t in tl])           # (T, n2)
        C = np.stack([t[0] for t in tl], axis=1)       # (nx, T)
        M = np.stack([t[3] for t in tl])               # (T, c)
        G = (A[:, :, None] * B[:, None, :]).reshape(len(tl), -1)   # (T, n1 n2)
        W = np.multiply.outer(w1, w2).ravel()
        total = 0.0
        for c0 in range(0, C.shape[0], chunk):
            Cc = C[c0:c0 + chunk]
            sq = 0.0
            for c in range(M.shape[1]):
                if np.any(M[:, c]):
                    Vc = (Cc * M[:, c]) @ G
                    sq = sq + Vc * Vc
            total += float(np.sum(self.wx[c0:c0 + chunk] * ((np.sqrt(sq) ** s) @ W)))
        return total ** (1.0 / s)

    # --- quantities ------------------------------------------------------------------
    def u_c(self, i):
        bf, co = self.blocks[i], self.co
        return (bf.Wc.times(co.a[i]) + bf.Wcc_par.times(co.b1[i]) + bf.Wcc_perp.times(co.b2[i]))

    def u_t_osc(self, i):
        return self.blocks[i].y_pattern().times(self.co.a_sq[i]) * -1.0

    def R_quad(self, i):
        return s_tilde_n(grad(self.co.a_sq[i]), self.blocks[i].quad_pattern(), self.N).R

    def R_time(self, i):
        bf, co = self.blocks[i], self.co
        coefs = (co.a[i], co.a[i], co.b1[i], co.b2[i])
        terms = []
        for c, name in zip(coefs, ("Wp", "Wc", "Wcc_par", "Wcc_perp")):
            W = getattr(bf, name)
            Tt = time_tensor(bf, name)
            terms += s_n(c.diff(T), W, self.N).R.terms
            terms += Tt.times(c).terms
            terms += (s_tilde_n(grad(c), Tt, self.N).R * -1.0).terms
        return ModulatedField(terms, (2, 2))

    def energy_excess(self) -> float:
        """|int |u_1|^2 - sum_k int a_k^2| in the two-scale limit.

        The designed value sum_k int a_k^2 = e (1 - delta/2) + 20 eps ||chi||^2;
        the pair (a W^p, a W^p) contributes int a^2 (<|W^p|^2> - 1), kept exactly.
        """
        total = 0.0
        for i, bf in enumerate(self.blocks):
            a = self.co.a[i]
            U = ModulatedField(bf.Wp.times(a).terms + self.u_c(i).terms + self.u_t_osc(i).terms, (2,))
            n0 = len(bf.Wp.terms)
            total += self.l2_squared(U, skip_diagonal_of=set(range(n0)))
            pr = bf.profiles
            gap = self._mean2(pr["phi1"], pr["phi1"], 1) * self._mean2(pr["phi2"], pr["phi2"], 2) - 1.0
            total += gap * float(np.sum(self.wx * self.coef(a) ** 2))
        return abs(total)

    def curl_w_atom(self, p: float = 0.75, m: int = 201) -> float:
        """Atomic bound^(1/p) of curl w = -sum Laplace H^k over the support lattice at time t."""
        P = self.params
        C = calibrate(p)
        total = 0.0
        for i, bf in enumerate(self.blocks):
            pr = bf.profiles
            d = bf.direction
            lat = support_lattice(bf.k, P, self.t, self.co.kappa)
            if len(lat) == 0:
                continue
            z1 = np.linspace(-0.5, 0.5, m) / pr["phi1"].mu
            z2 = np.linspace(-0.5, 0.5, m) / pr["ddPhi2"].mu
            a1 = pr["phi1"].derivs_local(z1, 2)
            a2 = pr["ddPhi2"].derivs_local(z2, 2)
            lap = np.abs(np.outer(a1[2], a2[0]) + np.outer(a1[0], a2[2])).max()
            s_cc = 1.0 / (P.lam * P.mu2)
            sup_unit = s_cc / d.norm * P.lam ** 2 * d.norm_sq * lap
            av = np.abs(self.co.a[i](lat.centers.T, self.t))
            total += C ** p * np.pi * lat.radius ** 2 * float(np.sum((av * sup_unit) ** p))
        return total ** (1.0 / p)

    def value(self, name: str, p: float = 0.75) -> float:
        if name == "u_c_L2":
            return float(np.sqrt(sum(self.l2_squared(self.u_c(i)) for i in range(4))))
        if name == "u_t_L2":
            return float(np.sqrt(sum(self.l2_squared(self.u_t_osc(i)) for i in range(4))))
        if name == "R_quad_L1":
            return sum(self.ls(self.R_quad(i), 1.0) for i in range(4))
        if name == "R_time_L1":
            return sum(self.ls(self.R_time(i), 1.0) for i in range(4))
        if name == "curl_w_atom":
            return self.curl_w_atom(p)
        if name == "energy_excess":
            return self.energy_excess()
        raise KeyError(f"unknown quantity {name}")

    def measure(self, p: float = 0.75) -> dict:
        return {q: self.value(q, p) for q in QUANTITIES}


@dataclass
class SweepPoint:
    lam: int
    values: dict
    params: dict = field(default_factory=dict)


def sweep(lams, alpha: float, beta: float, p: float = 0.75, N: int = 2, t: float = 0.5,
          quantities=None) -> dict:
    """Measure every quantity at each lam and fit log-log slopes."""
    points = []
    for lam in lams:
        P = ParamSet.from_exponents(int(lam), alpha, beta, N, p=p)
        eng = TwoScaleEngine(P, t=t, N=min(N, 2))
        vals = eng.measure(p)
        if quantities is not None:
            vals = {k: v for k, v in vals.items() if k in quantities}
        points.append(SweepPoint(int(lam), vals, P.as_dict()))
    pred = PREDICTED(alpha, beta, p)
    fits = {}
    for q in points[0].values:
        ys = [pt.values[q] for pt in points]
        if min(ys) <= 0:
            fits[q] = {"slope": float("nan"), "predicted": pred[q], "note": "degenerate values"}
            continue
        s, b, r = fit_slope(lams, ys)
        fits[q] = {"slope": s, "predicted": pred[q], "residual": r, "values": ys}
    return {"points": points, "fits": fits}
