"""Truncated multivariate Taylor expansions ("jets") in (x1, x2, t).

A jet of order K stores, for a batch of base points, the scaled derivatives
c_a = d^a f / a! for every multi-index a with |a| <= K.  Multi-indices are
kept in graded order, so truncating a jet is a slice of its coefficients.

Every closed-form field in the package is evaluated through jets, which gives
exact derivatives (up to rounding) through products, compositions and the
linear phase maps of the building blocks.
"""
from __future__ import annotations

from functools import lru_cache
from itertools import product
from math import factorial

import numpy as np

NVAR = 3  # x1, x2, t
X1, X2, T = 0, 1, 2


@lru_cache(maxsize=None)
def multi_indices(order: int) -> tuple:
    """All multi-indices with total degree <= order, in graded order."""
    out = []
    for deg in range(order + 1):
        block = [a for a in product(range(deg + 1), repeat=NVAR) if sum(a) == deg]
        block.sort(reverse=True)
        out.extend(block)
    return tuple(out)


@lru_cache(maxsize=None)
def _index(order: int) -> dict:
    return {a: i for i, a in enumerate(multi_indices(order))}


def ncoef(order: int) -> int:
    return len(multi_indices(order))


@lru_cache(maxsize=None)
def _degrees(order: int) -> np.ndarray:
    return np.array([sum(a) for a in multi_indices(order)])


@lru_cache(maxsize=None)
def _factorials(order: int) -> np.ndarray:
    return np.array([float(np.prod([factorial(k) for k in a])) for a in multi_indices(order)])


@lru_cache(maxsize=None)
def _mul_plan(order: int) -> list:
    """For each left index i, the (right indices, output indices) it pairs with."""
    idx = _index(order)
    mi = multi_indices(order)
    plan = []
    for i, a in enumerate(mi):
        js, ks = [], []
        for j, b in enumerate(mi):
            s = tuple(p + q for p, q in zip(a, b))
            if sum(s) <= order:
                js.append(j)
                ks.append(idx[s])
        plan.append((np.array(js), np.array(ks)))
    return plan


@lru_cache(maxsize=None)
def _diff_plan(order: int, var: int) -> tuple:
    """Index map and weights taking a jet of `order` to its var-derivative."""
    idx = _index(order)
    src, w = [], []
    for b in multi_indices(order - 1):
        s = list(b)
        s[var] += 1
        src.append(idx[tuple(s)])
        w.append(float(s[var]))
    return np.array(src), np.array(w)


@lru_cache(maxsize=None)
def _linear_plan(order: int) -> tuple:
    mi = np.array(multi_indices(order), dtype=int).reshape(-1, NVAR)
    return mi, _degrees(order), _factorials(order)


def _bshape(c):
    return c.shape[1:]


class Jet:
    """Batch of truncated Taylor expansions in (x1, x2, t)."""

    __array_priority__ = 100

    def __init__(self, coef, order: int):
        self.c = np.asarray(coef, dtype=float)
        self.order = int(order)
        if self.c.shape[0] != ncoef(self.order):
            raise ValueError("coefficient count does not match order")

    # construction -----------------------------------------------------
    @classmethod
    def constant(cls, value, order: int) -> "Jet":
        value = np.asarray(value, dtype=float)
        c = np.zeros((ncoef(order),) + value.shape)
        c[0] = value
        return cls(c, order)

    @classmethod
    def variable(cls, value, var: int, order: int) -> "Jet":
        value = np.asarray(value, dtype=float)
        c = np.zeros((ncoef(order),) + value.shape)
        c[0] = value
        if order >= 1:
            c[1 + var] = 1.0
        return cls(c, order)

    @classmethod
    def zeros(cls, shape, order: int) -> "Jet":
        return cls(np.zeros((ncoef(order),) + tuple(shape)), order)

    @staticmethod
    def stack(jets, axis: int = 0) -> "Jet":
        order = min(j.order for j in jets)
        n = ncoef(order)
        cs = [np.broadcast_to(j.c[:n], (n,) + np.broadcast_shapes(*[_bshape(k.c) for k in jets]))
              for j in jets]
        ax = axis if axis < 0 else axis + 1
        return Jet(np.stack(cs, axis=ax), order)

    # access -----------------------------------------------------------
    @property
    def shape(self):
        return self.c.shape[1:]

    @property
    def val(self) -> np.ndarray:
        return self.c[0]

    def d(self, alpha) -> np.ndarray:
        """Derivative d^alpha at the base points."""
        alpha = tuple(alpha)
        i = _index(self.order)[alpha]
        return self.c[i] * _factorials(self.order)[i]

    def grad_val(self) -> np.ndarray:
        """Spatial gradient of the value, shape (2,) + batch."""
        return np.stack([self.c[1 + X1], self.c[1 + X2]])

    def truncate(self, order: int) -> "Jet":
        if order > self.order:
            raise ValueError("cannot raise jet order")
        if order == self.order:
            return self
        return Jet(self.c[: ncoef(order)], order)

    def diff(self, var: int) -> "Jet":
        if self.order < 1:
            raise ValueError("derivative order exhausted")
        src, w = _diff_plan(self.order, var)
        wb = w.reshape((-1,) + (1,) * (self.c.ndim - 1))
        return Jet(self.c[src] * wb, self.order - 1)

    def __getitem__(self, key) -> "Jet":
        if not isinstance(key, tuple):
            key = (key,)
        return Jet(self.c[(slice(None),) + key], self.order)

    def reshape(self, *shape) -> "Jet":
        return Jet(self.c.reshape((self.c.shape[0],) + tuple(shape)), self.order)

    def sum(self, axis) -> "Jet":
        ax = axis if axis < 0 else axis + 1
        return Jet(self.c.sum(axis=ax), self.order)

    def broadcast_to(self, shape) -> "Jet":
        return Jet(np.broadcast_to(self.c, (self.c.shape[0],) + tuple(shape)).copy(), self.order)

    # arithmetic -------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, Jet):
            order = min(self.order, other.order)
            return self.truncate(order), other.truncate(order)
        return self, other

    def __add__(self, other):
        a, b = self._coerce(other)
        if isinstance(b, Jet):
            return Jet(a.c + b.c, a.order)
        c = a.c.copy() if np.ndim(b) <= a.c.ndim - 1 else np.broadcast_to(a.c, a.c.shape[:1] + np.broadcast_shapes(a.shape, np.shape(b))).copy()
        c[0] = c[0] + b
        return Jet(c, a.order)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.c, self.order)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.c * np.asarray(other, dtype=float), self.order)
        a, b = self._coerce(other)
        shape = np.broadcast_shapes(a.shape, b.shape)
        out = np.zeros((a.c.shape[0],) + shape)
        for i, (js, ks) in enumerate(_mul_plan(a.order)):
            out[ks] += a.c[i] * b.c[js]
        return Jet(out, a.order)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.reciprocal()
        return Jet(self.c / np.asarray(other, dtype=float), self.order)

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, p):
        if isinstance(p, int) and p >= 0:
            out = Jet.constant(np.ones(self.shape), self.order)
            base = self
            while p:
                if p & 1:
                    out = out * base
                p >>= 1
                if p:
                    base = base * base
            return out
        return self.power(float(p))

    # composition ------------------------------------------------------
    def compose(self, derivs) -> "Jet":
        """g(self) given derivs = [g(v0), g'(v0), ..., g^(K)(v0)] at the values.

        Uses the linear fast path when self has no terms beyond degree one.
        """
        K = self.order
        derivs = [np.asarray(d, dtype=float) for d in derivs]
        if self._is_linear():
            return self._compose_linear(derivs)
        h = Jet(self.c.copy(), K)
        h.c[0] = 0.0
        acc = Jet.constant(derivs[K] / factorial(K), K)
        for j in range(K - 1, -1, -1):
            acc = acc * h + derivs[j] / factorial(j)
        return acc

    def _is_linear(self) -> bool:
        if self.order <= 1:
            return True
        return not np.any(self.c[1 + NVAR:])

    def _compose_linear(self, derivs) -> "Jet":
        K = self.order
        mi, deg, fac = _linear_plan(K)
        shape = np.broadcast_shapes(self.shape, *[d.shape for d in derivs])
        out = np.empty((ncoef(K),) + shape)
        grad = [self.c[1 + v] if K >= 1 else 0.0 for v in range(NVAR)]
        for i in range(ncoef(K)):
            term = derivs[deg[i]] / fac[i]
            for v in range(NVAR):
                if mi[i, v]:
                    term = term * grad[v] ** mi[i, v]
            out[i] = term
        return Jet(out, K)

    def power(self, p: float) -> "Jet":
        v = self.val
        K = self.order
        derivs = []
        coef = 1.0
        for n in range(K + 1):
            derivs.append(coef * v ** (p - n))
            coef *= (p - n)
        return self.compose(derivs)

    def sqrt(self) -> "Jet":
        return self.power(0.5)

    def reciprocal(self) -> "Jet":
        return self.power(-1.0)

    def exp(self) -> "Jet":
        e = np.exp(self.val)
        return self.compose([e] * (self.order + 1))

    def log(self) -> "Jet":
        v = self.val
        derivs = [np.log(v)]
        for n in range(1, self.order + 1):
            derivs.append((-1.0) ** (n - 1) * factorial(n - 1) * v ** (-n))
        return self.compose(derivs)

    def sin(self) -> "Jet":
        s, c = np.sin(self.val), np.cos(self.val)
        cyc = [s, c, -s, -c]
        return self.compose([cyc[n % 4] for n in range(self.order + 1)])

    def cos(self) -> "Jet":
        s, c = np.sin(self.val), np.cos(self.val)
        cyc = [c, -s, -c, s]
        return self.compose([cyc[n % 4] for n in range(self.order + 1)])


def dot(a: Jet, b: Jet, axis: int = 0) -> Jet:
    """Contraction of two jets along one component axis."""
    return (a * b).sum(axis)
