"""Intermittent building blocks, their support lattices and disjointness.

For a direction k with xh = xi_k/|xi_k| and xh_perp = xi_k^perp/|xi_k| the
space-time blocks are (y1, y2 the phases of the moving frame)

    W^p      = phi^k_{mu1}(y1) phi_{mu2}(y2) xh
    W^c      = -(mu1/mu2) (phi')^k_{mu1}(y1) (Phi'')_{mu2}(y2) xh_perp
    W^cc,par = -1/(lam mu2) phi^k_{mu1}(y1) (Phi'')_{mu2}(y2) xh
    W^cc,perp= same scalar times xh_perp
    Y        = -(1/omega) (phi^k_{mu1})^2(y1) phi_{mu2}^2(y2) xi_k

where f_mu is the 1-periodic extension of mu^{1/2} f(mu (y - 1/2)) and the
superscript k shifts the first profile by k |xi_k|^2 / 16.

Y carries a minus sign: since y1 = lam (xi.x - omega t), one has
d_t = -lam omega d_{y1} on the phase, and the sign makes
div(W^p (x) W^p) = d_t Y hold exactly.  Its cell mean is -xi_k / omega.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.spatial import cKDTree

from .fields import DIRECTIONS, Frame, ModulatedField, Term
from .params import ParamSet, ParameterError
from .profiles import Concentrated, Constant, make_base_profiles, periodize

__all__ = ["BlockFamily", "SupportLattice", "make_blocks", "support_lattice",
           "verify_disjointness", "DisjointnessReport", "block_profiles"]


def block_profiles(k: int, mu1: float, mu2: float):
    """The periodic 1D factors of direction k (dict of Concentrated profiles)."""
    Phi, phi, _ = make_base_profiles()
    d = DIRECTIONS[k]
    sh = d.shift
    return {
        "phi1": periodize(phi, mu1, sh),
        "dphi1": periodize(phi.derivative(), mu1, sh),
        "phi2": periodize(phi, mu2),
        "ddPhi2": periodize(Phi.derivative(2), mu2),
        "phi1_sq": Concentrated((3, 3), mu1, 0.5 + sh, mu1 * phi.scale ** 2, phi.family),
        "phi2_sq": Concentrated((3, 3), mu2, 0.5, mu2 * phi.scale ** 2, phi.family),
    }


@dataclass
class BlockFamily:
    k: int
    params: ParamSet
    frame: Frame
    profiles: dict
    w: ModulatedField
    w_c: ModulatedField
    w_cc: ModulatedField
    q: ModulatedField
    Wp: ModulatedField
    Wc: ModulatedField
    Wcc_par: ModulatedField
    Wcc_perp: ModulatedField
    Y: ModulatedField
    y_sign = -1.0

    @property
    def direction(self):
        return DIRECTIONS[self.k]

    def mean_zero_blocks(self):
        return {"Wp": self.Wp, "Wc": self.Wc, "Wcc_par": self.Wcc_par, "Wcc_perp": self.Wcc_perp}

    def moment(self) -> np.ndarray:
        """Cell integral of W^p (x) W^p computed from the separable factors."""
        pr = self.profiles
        i1 = pr["phi1_sq"].integral()
        i2 = pr["phi2_sq"].integral()
        h = self.direction.hat
        return i1 * i2 * np.outer(h, h)


    def quad_pattern(self) -> ModulatedField:
        """W^p (x) W^p - xh (x) xh as a modulated tensor pattern."""
        pr = self.profiles
        h = self.direction.hat
        hh = np.outer(h, h)
        return ModulatedField([Term(None, pr["phi1_sq"], pr["phi2_sq"], self.frame, hh),
                               Term(None, Constant(1.0), Constant(1.0), self.frame, -hh)], (2, 2))

    def y_pattern(self) -> ModulatedField:
        """Y minus its cell mean."""
        pr = self.profiles
        xi = self.direction.xi
        s = self.y_sign / self.params.omega
        return ModulatedField([Term(None, pr["phi1_sq"], pr["phi2_sq"], self.frame, s * xi),
                               Term(None, Constant(1.0), Constant(1.0), self.frame, -s * xi)], (2,))

    @property
    def y_mean(self) -> np.ndarray:
        return self.y_sign / self.params.omega * self.direction.xi


def make_blocks(k: int, params: ParamSet) -> BlockFamily:
    if params.mu2 < params.mu1:
        raise ParameterError("parameter order violated: mu2 < mu1")
    lam, mu1, mu2, om = params.lam, params.mu1, params.mu2, params.omega
    d = DIRECTIONS[k]
    pr = block_profiles(k, mu1, mu2)
    fr = Frame(d, lam, om)
    ax = Frame.axes(lam)
    s_cc = -1.0 / (lam * mu2)

    def field(frame, p1, p2, scale, M=None):
        M = np.array(1.0) if M is None else np.asarray(M, dtype=float)
        return ModulatedField([Term(None, p1, p2, frame, scale * M)], M.shape)

    return BlockFamily(
        k=k, params=params, frame=fr, profiles=pr,
        w=field(ax, pr["phi1"], pr["phi2"], 1.0),
        w_c=field(ax, pr["dphi1"], pr["ddPhi2"], -mu1 / mu2),
        w_cc=field(ax, pr["phi1"], pr["ddPhi2"], s_cc),
        q=field(ax, pr["phi1_sq"], pr["phi2_sq"], -1.0 / om),
        Wp=field(fr, pr["phi1"], pr["phi2"], 1.0, d.hat),
        Wc=field(fr, pr["dphi1"], pr["ddPhi2"], -mu1 / mu2, d.hat_perp),
        Wcc_par=field(fr, pr["phi1"], pr["ddPhi2"], s_cc, d.hat),
        Wcc_perp=field(fr, pr["phi1"], pr["ddPhi2"], s_cc, d.hat_perp),
        Y=field(fr, pr["phi1_sq"], pr["phi2_sq"], -1.0 / om, d.xi),
    )


# --- support lattices -------------------------------------------------------

@dataclass
class SupportLattice:
    k: int
    centers: np.ndarray          # (n, 2)
    radius: float
    t: float
    box: float                   # clipping radius kappa + 1

    def __len__(self):
        return len(self.centers)


def _lattice_offset(k: int, lam: int, omega: float, t: float) -> np.ndarray:
    """Lattice origin: Lambda^{-1}(1/2 + shift, 1/2)/lam + omega t xi/|xi|^2 reduced mod the lattice."""
    d = DIRECTIONS[k]
    # reduce the translation in phase units to keep precision for huge omega t
    s = (lam * omega * t) % 1.0
    z = np.array([0.5 + d.shift + s, 0.5]) / lam
    return d.Lambda_inv @ z


def support_lattice(family_or_k, params: ParamSet | None = None, t: float = 0.0,
                    kappa: int | None = None) -> SupportLattice:
    """Ball centers of supp W_k(., t) whose balls meet B_{kappa+1}."""
    if isinstance(family_or_k, BlockFamily):
        k, params = family_or_k.k, family_or_k.params
    else:
        k = int(family_or_k)
    kappa = params.kappa if kappa is None else kappa
    lam = params.lam
    d = DIRECTIONS[k]
    r = 1.0 / (lam * params.mu1)
    R = kappa + 1.0
    o = _lattice_offset(k, lam, params.omega, t)
    # lattice Lambda^{-1} Z^2 / lam: generators xi/|xi|^2/lam and xi_perp/|xi|^2/lam
    g1 = d.Lambda_inv[:, 0] / lam
    g2 = d.Lambda_inv[:, 1] / lam
    m = int(np.ceil((R + r + np.linalg.norm(o)) * lam * d.norm)) + 2
    i = np.arange(-m, m + 1)
    I1, I2 = np.meshgrid(i, i, indexing="ij")
    pts = o + I1.ravel()[:, None] * g1 + I2.ravel()[:, None] * g2
    keep = np.linalg.norm(pts, axis=1) <= R + r
    return SupportLattice(k, pts[keep], r, t, R)


@dataclass
class DisjointnessReport:
    disjoint: bool
    min_gap: float               # smallest center distance over the sampled times
    required_gap: float          # 2 radius
    mu1_threshold: float         # smallest mu1 for which the sampled lattices are disjoint
    worst_pair: tuple
    mu1_threshold_all_t: float   # same, over all times (closed form)
    per_time: list


def _combined_distance(k1: int, k2: int, lam: int, omega: float) -> float:
    """Inf over all t of the distance between the two center sets, in units of 1/lam.

    Center differences are offset + lattice + t * velocity; the velocity is a
    rational direction, so the infimum is the smallest distance from a
    lattice coset to a line, found by enumeration over a window.
    """
    d1, d2 = DIRECTIONS[k1], DIRECTIONS[k2]
    o = (d1.Lambda_inv @ np.array([0.5 + d1.shift, 0.5])) - (d2.Lambda_inv @ np.array([0.5 + d2.shift, 0.5]))
    v = d1.xi / d1.norm_sq - d2.xi / d2.norm_sq
    n = np.array([v[1], -v[0]]) / np.linalg.norm(v)
    i = np.arange(-12, 13)
    gens = [d1.Lambda_inv[:, 0], d1.Lambda_inv[:, 1], d2.Lambda_inv[:, 0], d2.Lambda_inv[:, 1]]
    grids = np.meshgrid(i, i, i, i, indexing="ij")
    pts = o + sum(g.ravel()[:, None] * gi for g, gi in zip(grids, gens))
    return float(np.min(np.abs(pts @ n)))


def verify_disjointness(params: ParamSet, t_samples, kappa: int | None = None) -> DisjointnessReport:
    kappa = params.kappa if kappa is None else kappa
    lam = params.lam
    r = 1.0 / (lam * params.mu1)
    best = np.inf
    worst = None
    per_time = []
    for t in t_samples:
        lats = {k: support_lattice(k, params, t, kappa) for k in (1, 2, 3, 4)}
        gap_t = np.inf
        for k1, k2 in combinations((1, 2, 3, 4), 2):
            a, b = lats[k1].centers, lats[k2].centers
            if len(a) == 0 or len(b) == 0:
                continue
            dist, _ = cKDTree(b).query(a)
            g = float(dist.min())
            if g < gap_t:
                gap_t = g
            if g < best:
                best, worst = g, (k1, k2, float(t))
        per_time.append({"t": float(t), "min_gap": gap_t, "disjoint": bool(gap_t > 2 * r)})
    all_t = min(_combined_distance(k1, k2, lam, params.omega)
                for k1, k2 in combinations((1, 2, 3, 4), 2))
    return DisjointnessReport(
        disjoint=bool(best > 2 * r), min_gap=best, required_gap=2 * r,
        mu1_threshold=2.0 / (lam * best) if best > 0 else np.inf, worst_pair=worst,
        mu1_threshold_all_t=2.0 / all_t if all_t > 0 else np.inf, per_time=per_time)
