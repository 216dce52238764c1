"""Seeded importance-sampling integrals of fields with thin moving supports.

Fields built from the blocks live on rectangles of size 1/(lam mu1) x
1/(lam mu2) (or a few cell widths across in y2 for the cell potentials),
far below any affordable grid.  The sampler mixes a uniform density on
the box with uniform densities on those rectangles, chosen in phase
variables of each direction frame.  The mixture density of a point is
computed exactly from cell membership, so the estimator is unbiased;
its standard error is reported with every value.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import DIRECTIONS, FieldExpr, Frame
from .params import ParamSet

__all__ = ["PhaseSampler", "MCValue", "mc_norm", "mc_integral"]


@dataclass
class MCValue:
    value: float
    stderr: float
    samples: int

    def __float__(self):
        return self.value


@dataclass
class _RectComponent:
    frame: Frame
    c1: float
    c2: float
    h1: float
    h2: float
    cells: np.ndarray            # (m, 2) integer cell indices
    keys: np.ndarray             # sorted encoded indices
    weight: float

    def _encode(self, n1, n2):
        return n1.astype(np.int64) * 2_000_003 + n2.astype(np.int64)

    def density(self, x, t):
        y1, y2 = self.frame.phases(x, t)
        d1 = y1 - self.c1
        d2 = y2 - self.c2
        n1 = np.round(d1)
        n2 = np.round(d2)
        inside = (np.abs(d1 - n1) < self.h1) & (np.abs(d2 - n2) < self.h2)
        code = self._encode(n1, n2)
        pos = np.searchsorted(self.keys, code)
        pos = np.clip(pos, 0, len(self.keys) - 1)
        member = inside & (self.keys[pos] == code)
        area = 4 * self.h1 * self.h2
        return np.where(member, self.frame.jacobian / (area * len(self.cells)), 0.0)

    def draw(self, rng, n, t):
        idx = rng.integers(0, len(self.cells), n)
        y1 = self.c1 + self.cells[idx, 0] + rng.uniform(-self.h1, self.h1, n)
        y2 = self.c2 + self.cells[idx, 1] + rng.uniform(-self.h2, self.h2, n)
        return self.frame.to_x(y1, y2, t)


class PhaseSampler:
    """Mixture of box-uniform points and the block support rectangles at time t.

    `widths` lists (h1, h2) half-sizes in phase units; the defaults cover
    the block cores and a band of width 4/mu1 in y2 where the cell
    potentials decay.
    """

    def __init__(self, params: ParamSet, K: float, t: float, widths=None, box_weight: float = 0.2,
                 centers=None):
        self.K = float(K)
        self.t = float(t)
        lam = params.lam
        if widths is None:
            widths = [(0.5 / params.mu1, 0.5 / params.mu2), (0.5 / params.mu1, min(4.0 / params.mu1, 0.45))]
        comps = []
        for k in (1, 2, 3, 4):
            d = DIRECTIONS[k]
            fr = Frame(d, lam, params.omega)
            c1 = (0.5 + d.shift) if centers is None else centers[k][0]
            c2 = 0.5 if centers is None else centers[k][1]
            # cells whose centers fall in the enlarged box
            corners = np.array([[-1, -1], [-1, 1], [1, -1], [1, 1]], float).T * (self.K + 1.0)
            y1, y2 = fr.phases(corners, t)
            r1 = np.arange(np.floor(y1.min() - c1) - 1, np.ceil(y1.max() - c1) + 2)
            r2 = np.arange(np.floor(y2.min() - c2) - 1, np.ceil(y2.max() - c2) + 2)
            N1, N2 = np.meshgrid(r1, r2, indexing="ij")
            xc = fr.to_x(c1 + N1.ravel(), c2 + N2.ravel(), t)
            keep = np.max(np.abs(xc), axis=0) <= self.K + 0.5
            cells = np.stack([N1.ravel()[keep], N2.ravel()[keep]], axis=1).astype(np.int64)
            for h1, h2 in widths:
                comp = _RectComponent(fr, c1, c2, h1, h2, cells, np.empty(0, np.int64), 0.0)
                comp.keys = np.sort(comp._encode(cells[:, 0], cells[:, 1]))
                comps.append(comp)
        wr = (1.0 - box_weight) / len(comps)
        for c in comps:
            c.weight = wr
        self.box_weight = box_weight
        self.components = comps

    def density(self, x):
        L = 2 * self.K
        inbox = np.all(np.abs(x) <= self.K, axis=0)
        p = self.box_weight * inbox / (L * L)
        for c in self.components:
            p = p + c.weight * c.density(x, self.t)
        return p

    def draw(self, rng, n: int):
        counts = rng.multinomial(n, [self.box_weight] + [c.weight for c in self.components])
        xs = [rng.uniform(-self.K, self.K, (2, counts[0]))]
        for c, m in zip(self.components, counts[1:]):
            if m:
                xs.append(c.draw(rng, m, self.t))
        x = np.concatenate(xs, axis=1)
        return x[:, rng.permutation(x.shape[1])]


def _pointwise(v, ndim):
    if ndim == 0:
        return np.abs(v)
    return np.sqrt(np.sum(v * v, axis=tuple(range(ndim))))


def mc_integral(fn, sampler: PhaseSampler, n: int = 1 << 15, seed: int = 0) -> MCValue:
    """int fn(x) dx over R^2 for fn supported in the sampler box or its rectangles."""
    rng = np.random.default_rng(seed)
    x = sampler.draw(rng, n)
    p = sampler.density(x)
    v = np.asarray(fn(x)) / p
    return MCValue(float(v.mean()), float(v.std(ddof=1) / np.sqrt(n)), n)


def mc_norm(f: FieldExpr, s: float, params: ParamSet, K: float, t: float = 0.0,
            n: int = 1 << 15, seed: int = 0, sampler: PhaseSampler | None = None) -> MCValue:
    """||f(., t)||_{L^s} by importance sampling (s = inf: sampled maximum)."""
    if f.is_zero():
        return MCValue(0.0, 0.0, 0)
    sampler = sampler or PhaseSampler(params, K, t)
    nd = len(f.shape)
    if np.isinf(s):
        rng = np.random.default_rng(seed)
        x = sampler.draw(rng, n)
        return MCValue(float(_pointwise(f(x, t), nd).max()), 0.0, n)
    I = mc_integral(lambda x: _pointwise(f(x, t), nd) ** s, sampler, n, seed)
    val = max(I.value, 0.0) ** (1.0 / s)
    err = (val / (s * I.value) * I.stderr) if I.value > 0 else 0.0
    return MCValue(val, err, n)
