"""Closed-form space-time fields on R^2 and their calculus.

Fields are expression trees evaluated through jets (see `jets`), so every
derivative is analytic.  Two families of nodes matter most:

* generic nodes (constants, coordinates, sums, products, compositions,
  derivatives) used for smooth coefficients such as cutoffs and energies;
* `ModulatedField`, a sum of terms c(x, t) P1(y1) P2(y2) M where P1, P2 are
  1-periodic profiles, (y1, y2) = lam * (xi.x - omega t, xi_perp.x) is the
  moving frame of a direction and M is a constant vector or matrix.  These
  carry the building blocks; they differentiate symbolically and can be
  integrated cell by cell.

Conventions: curl u = d1 u2 - d2 u1 and perp_grad f = (d2 f, -d1 f), so that
curl(perp_grad f) = -Laplace f.  Tensor divergence is (div R)_i = d_j R_ij.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .jets import Jet, NVAR, T, X1, X2
from .profiles import Periodic1D, gauss

__all__ = [
    "FieldError", "Support", "Direction", "DIRECTIONS", "Frame", "Evaluator",
    "FieldExpr", "ConstantField", "Coordinate", "TimeFunction", "ComposeField",
    "SumField", "MulField", "OuterField", "DotField", "ComponentField", "StackField",
    "DerivativeField", "Term", "ModulatedField",
    "zero", "const", "stack", "outer", "dot", "grad", "div", "curl", "perp_grad",
    "time_derivative", "calculus", "trace", "traceless", "sym",
    "ls_norm", "improved_holder_gap", "fast_oscillation_pairing", "fast_oscillation_bound",
    "dump_field", "load_field", "c1_norm", "modulated_product",
    "TimeIntegralField", "FrozenTimeField", "CellField", "compose_linear_2d",
]


class FieldError(ValueError):
    """Raised for invalid field operations."""


# --- support descriptors ---------------------------------------------------

@dataclass(frozen=True)
class Support:
    kind: str = "everywhere"          # "everywhere", "periodic", "compact", "lattice"
    box: float = np.inf               # half side of [-K, K]^2 for compact supports
    centers: tuple = ()
    radius: float = 0.0

    @staticmethod
    def compact(K: float) -> "Support":
        return Support("compact", float(K))

    @staticmethod
    def periodic() -> "Support":
        return Support("periodic")

    def union(self, other: "Support") -> "Support":
        if self.kind == "compact" and other.kind == "compact":
            return Support.compact(max(self.box, other.box))
        if self.kind == other.kind == "periodic":
            return self
        return Support()

    def intersect(self, other: "Support") -> "Support":
        if self.kind == "compact" and other.kind == "compact":
            return Support.compact(min(self.box, other.box))
        if self.kind == "compact":
            return self
        if other.kind == "compact":
            return other
        if self.kind == other.kind == "periodic":
            return self
        return Support()


# --- directions and frames -------------------------------------------------

class Direction:
    """One of the four lattice directions xi_k with xi_perp = (xi2, -xi1)."""

    _XI = {1: (1, 0), 2: (0, 1), 3: (1, 1), 4: (1, -1)}

    def __init__(self, k: int):
        if k not in self._XI:
            raise FieldError("direction index must be 1..4")
        self.k = k
        self.xi = np.array(self._XI[k], dtype=float)
        self.xi_perp = np.array([self.xi[1], -self.xi[0]])
        self.norm_sq = float(self.xi @ self.xi)
        self.norm = float(np.sqrt(self.norm_sq))
        self.Lambda = np.stack([self.xi, self.xi_perp])
        self.Lambda_inv = self.Lambda.T / self.norm_sq
        self.hat = self.xi / self.norm
        self.hat_perp = self.xi_perp / self.norm

    @property
    def shift(self) -> float:
        """Translation k/16 |xi_k|^2 of the first profile."""
        return self.k / 16.0 * self.norm_sq

    def __repr__(self):
        return f"Direction({self.k})"


DIRECTIONS = {k: Direction(k) for k in (1, 2, 3, 4)}


class Frame:
    """Phases y1 = lam (xi.x - omega t), y2 = lam xi_perp.x of a direction.

    `Frame.axes(lam)` is the unrotated frame y = lam x used for the
    building blocks on the torus before rotation.
    """

    def __init__(self, direction: Direction | None, lam: float, omega: float = 0.0):
        self.direction = direction
        self.lam = float(lam)
        self.omega = float(omega)
        if direction is None:
            self.A = np.array([[lam, 0.0, 0.0], [0.0, lam, 0.0]])
            self.key = (0, self.lam, 0.0)
            self.B = np.eye(2)
        else:
            d = direction
            self.A = np.array([[lam * d.xi[0], lam * d.xi[1], -lam * omega],
                               [lam * d.xi_perp[0], lam * d.xi_perp[1], 0.0]])
            self.key = (direction.k, self.lam, self.omega)
            self.B = d.Lambda

    @classmethod
    def axes(cls, lam: float) -> "Frame":
        return cls(None, lam, 0.0)

    def phases(self, x, t):
        x = np.asarray(x, dtype=float)
        z1 = self.B[0, 0] * x[0] + self.B[0, 1] * x[1] - self.omega * np.asarray(t)
        z2 = self.B[1, 0] * x[0] + self.B[1, 1] * x[1]
        return self.lam * z1, self.lam * z2

    def to_x(self, y1, y2, t=0.0):
        """Inverse map from phases to points."""
        z1 = np.asarray(y1) / self.lam + self.omega * np.asarray(t)
        z2 = np.asarray(y2) / self.lam
        Binv = np.linalg.inv(self.B)
        return np.stack([Binv[0, 0] * z1 + Binv[0, 1] * z2, Binv[1, 0] * z1 + Binv[1, 1] * z2])

    @property
    def jacobian(self) -> float:
        """|det dy/dx|."""
        return self.lam ** 2 * abs(np.linalg.det(self.B))

    def __eq__(self, other):
        return isinstance(other, Frame) and self.key == other.key

    def __hash__(self):
        return hash(self.key)


# --- evaluation -------------------------------------------------------------

class Evaluator:
    """Evaluation context: base points, jet order requests and a memo table."""

    def __init__(self, x, t):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        self.x = x
        n = x.shape[1]
        self.t = np.broadcast_to(np.asarray(t, dtype=float), (n,)).copy()
        self.n = n
        self._memo = {}
        self._vars = {}

    def var(self, v: int, order: int) -> Jet:
        key = (v, order)
        if key not in self._vars:
            base = self.t if v == T else self.x[v]
            self._vars[key] = Jet.variable(base, v, order)
        return self._vars[key]

    def get(self, field: "FieldExpr", order: int) -> Jet:
        key = id(field)
        hit = self._memo.get(key)
        if hit is not None and hit[0] >= order:
            return hit[1].truncate(order)
        jet = field._eval(self, order)
        self._memo[key] = (order, jet, field)
        return jet

    def periodic_jet(self, p: Periodic1D, frame: Frame, axis: int, order: int) -> Jet:
        key = ("p", id(p), frame.key, axis)
        hit = self._memo.get(key)
        if hit is not None and hit[0] >= order:
            return hit[1].truncate(order)
        y = frame.phases(self.x, self.t)[axis]
        derivs = p.derivs(y, order)
        lin = Jet.constant(y, order)
        if order >= 1:
            for v in range(NVAR):
                lin.c[1 + v] = frame.A[axis, v]
        jet = lin.compose(list(derivs))
        self._memo[key] = (order, jet, p)
        return jet


def _as_field(obj) -> "FieldExpr":
    if isinstance(obj, FieldExpr):
        return obj
    return ConstantField(np.asarray(obj, dtype=float))


class FieldExpr:
    """Base class of closed-form fields (scalar, 2-vector or 2x2 tensor)."""

    shape: tuple = ()
    support: Support = Support()
    periodic: bool = False
    name: str = ""

    @property
    def rank(self) -> str:
        return {0: "scalar", 1: "vector2", 2: "symtensor2"}[len(self.shape)]

    def _eval(self, ev: Evaluator, order: int) -> Jet:
        raise NotImplementedError

    def jet(self, x, t, order: int = 0, ev: Evaluator | None = None) -> Jet:
        ev = ev or Evaluator(x, t)
        return ev.get(self, order)

    def __call__(self, x, t=0.0) -> np.ndarray:
        return self.jet(x, t, 0).val

    # symbolic hooks -----------------------------------------------------
    def diff(self, var: int) -> "FieldExpr":
        return DerivativeField(self, var)

    def component(self, *idx) -> "FieldExpr":
        return ComponentField(self, idx)

    def is_zero(self) -> bool:
        return False

    # arithmetic ---------------------------------------------------------
    def __add__(self, other):
        other = _as_field(other)
        if other.is_zero():
            return self
        if self.is_zero():
            return other
        return SumField([self, other], [1.0, 1.0])

    def __radd__(self, other):
        return self + other

    def __sub__(self, other):
        return self + (-1.0) * _as_field(other)

    def __rsub__(self, other):
        return _as_field(other) + (-1.0) * self

    def __neg__(self):
        return (-1.0) * self

    def __mul__(self, other):
        if np.isscalar(other):
            if other == 0:
                return zero(self.shape)
            if other == 1:
                return self
            return SumField([self], [float(other)])
        return MulField(self, _as_field(other))

    def __rmul__(self, other):
        if np.isscalar(other):
            return self * other
        return MulField(_as_field(other), self)

    def __truediv__(self, other):
        if np.isscalar(other):
            return self * (1.0 / other)
        return MulField(self, ComposeField(_as_field(other), "reciprocal"))

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        return self.component(*idx)


class ConstantField(FieldExpr):
    def __init__(self, value):
        self.value = np.asarray(value, dtype=float)
        self.shape = self.value.shape

    def _eval(self, ev, order):
        v = self.value.reshape(self.shape + (1,))
        return Jet.constant(np.broadcast_to(v, self.shape + (ev.n,)), order)

    def diff(self, var):
        return zero(self.shape)

    def is_zero(self):
        return not np.any(self.value)


def zero(shape=()) -> ConstantField:
    return ConstantField(np.zeros(shape))


def const(value) -> ConstantField:
    return ConstantField(value)


class Coordinate(FieldExpr):
    """x1, x2 or t as a scalar field."""

    def __init__(self, var: int):
        self.var = var

    def _eval(self, ev, order):
        return ev.var(self.var, order)


class TimeFunction(FieldExpr):
    """Scalar function of t given by derivs(t, n) -> array (n+1, ...)."""

    def __init__(self, derivs, name: str = "g(t)"):
        self._derivs = derivs
        self.name = name

    def _eval(self, ev, order):
        d = self._derivs(ev.t, order)
        tj = ev.var(T, order)
        return tj.compose(list(d))

    def diff(self, var):
        if var != T:
            return zero()
        return TimeFunction(lambda t, n: self._derivs(t, n + 1)[1:], self.name + "'")


class ComposeField(FieldExpr):
    """Pointwise scalar function of a scalar field."""

    def __init__(self, arg: FieldExpr, kind: str, param=None, derivs=None):
        self.arg = arg
        self.kind = kind
        self.param = param
        self._derivs = derivs
        self.support = arg.support if kind in ("sqrt", "square", "user0") else Support()

    def _eval(self, ev, order):
        j = ev.get(self.arg, order)
        k = self.kind
        if k == "sqrt":
            return j.sqrt()
        if k == "reciprocal":
            return j.reciprocal()
        if k == "power":
            return j.power(self.param)
        if k == "exp":
            return j.exp()
        if k == "sin":
            return j.sin()
        if k == "cos":
            return j.cos()
        if k in ("user", "user0"):
            return j.compose(list(self._derivs(j.val, order)))
        raise FieldError(f"unknown composition {k}")


class SumField(FieldExpr):
    def __init__(self, fields, weights):
        flat_f, flat_w = [], []
        for f, w in zip(fields, weights):
            if isinstance(f, SumField):
                flat_f.extend(f.fields)
                flat_w.extend([w * v for v in f.weights])
            elif not f.is_zero() and w != 0:
                flat_f.append(f)
                flat_w.append(float(w))
        shapes = {f.shape for f in flat_f}
        if len(shapes) > 1:
            raise FieldError(f"cannot add fields of shapes {shapes}")
        self.fields = flat_f
        self.weights = flat_w
        self.shape = flat_f[0].shape if flat_f else fields[0].shape
        sup = None
        for f in flat_f:
            sup = f.support if sup is None else sup.union(f.support)
        self.support = sup or Support()
        self.periodic = all(f.periodic for f in flat_f)

    def _eval(self, ev, order):
        out = None
        for f, w in zip(self.fields, self.weights):
            j = ev.get(f, order) * w
            out = j if out is None else out + j
        if out is None:
            return Jet.zeros(self.shape + (ev.n,), order)
        return out

    def diff(self, var):
        return _sum([f.diff(var) for f in self.fields], self.weights, self.shape)

    def component(self, *idx):
        return _sum([f.component(*idx) for f in self.fields], self.weights, self.shape[len(idx):])

    def is_zero(self):
        return not self.fields


def _sum(fields, weights, shape):
    keep = [(f, w) for f, w in zip(fields, weights) if not f.is_zero() and w != 0]
    if not keep:
        return zero(shape)
    if len(keep) == 1 and keep[0][1] == 1.0:
        return keep[0][0]
    mods = [f for f, w in keep if isinstance(f, ModulatedField)]
    if len(mods) == len(keep):
        terms = []
        for f, w in keep:
            terms.extend(t.scaled(w) for t in f.terms)
        return ModulatedField(terms, shape)
    return SumField([f for f, _ in keep], [w for _, w in keep])


def _bcast_jet(j: Jet, shape, n):
    """Reshape a jet with component shape `s` to broadcast against `shape`."""
    s = j.shape[:-1]
    if s == tuple(shape):
        return j
    pad = len(shape) - len(s)
    return j.reshape(*(s + (1,) * pad + (n,)))


class MulField(FieldExpr):
    """Product where one factor is scalar, or an elementwise product."""

    def __init__(self, a: FieldExpr, b: FieldExpr):
        if a.shape and b.shape and a.shape != b.shape:
            raise FieldError("use outer/dot for non-scalar products")
        self.a, self.b = a, b
        self.shape = a.shape or b.shape
        self.support = a.support.intersect(b.support)
        self.periodic = a.periodic and b.periodic

    def _eval(self, ev, order):
        ja = _bcast_jet(ev.get(self.a, order), self.shape, ev.n)
        jb = _bcast_jet(ev.get(self.b, order), self.shape, ev.n)
        return ja * jb

    def diff(self, var):
        return self.a.diff(var) * self.b + self.a * self.b.diff(var)

    def component(self, *idx):
        if not self.a.shape:
            return self.a * self.b.component(*idx)
        if not self.b.shape:
            return self.a.component(*idx) * self.b
        return self.a.component(*idx) * self.b.component(*idx)

    def is_zero(self):
        return self.a.is_zero() or self.b.is_zero()


class OuterField(FieldExpr):
    def __init__(self, a: FieldExpr, b: FieldExpr):
        if a.shape != (2,) or b.shape != (2,):
            raise FieldError("outer product needs two vectors")
        self.a, self.b = a, b
        self.shape = (2, 2)
        self.support = a.support.intersect(b.support)

    def _eval(self, ev, order):
        ja = ev.get(self.a, order)
        jb = ev.get(self.b, order)
        return Jet(ja.c[:, :, None, :], ja.order) * Jet(jb.c[:, None, :, :], jb.order)

    def diff(self, var):
        return outer(self.a.diff(var), self.b) + outer(self.a, self.b.diff(var))

    def component(self, *idx):
        if len(idx) == 1:
            return self.a.component(idx[0]) * self.b
        return self.a.component(idx[0]) * self.b.component(idx[1])

    def is_zero(self):
        return self.a.is_zero() or self.b.is_zero()


class DotField(FieldExpr):
    """Vector.vector -> scalar or matrix.vector -> vector."""

    def __init__(self, a: FieldExpr, b: FieldExpr):
        if b.shape != (2,) or a.shape not in ((2,), (2, 2)):
            raise FieldError("dot needs (vector|matrix, vector)")
        self.a, self.b = a, b
        self.shape = a.shape[:-1]
        self.support = a.support.intersect(b.support)

    def _eval(self, ev, order):
        ja = ev.get(self.a, order)
        jb = ev.get(self.b, order)
        if len(self.a.shape) == 1:
            return (ja * jb).sum(0)
        return (ja * Jet(jb.c[:, None, :, :], jb.order)).sum(1)

    def diff(self, var):
        return dot(self.a.diff(var), self.b) + dot(self.a, self.b.diff(var))

    def is_zero(self):
        return self.a.is_zero() or self.b.is_zero()


class ComponentField(FieldExpr):
    def __init__(self, f: FieldExpr, idx):
        self.f = f
        self.idx = tuple(idx)
        self.shape = f.shape[len(self.idx):]
        self.support = f.support
        self.periodic = f.periodic

    def _eval(self, ev, order):
        return ev.get(self.f, order)[self.idx]

    def diff(self, var):
        return self.f.diff(var).component(*self.idx)


class StackField(FieldExpr):
    def __init__(self, fields, shape):
        self.fields = list(fields)
        self.shape = tuple(shape)
        sup = None
        for f in self.fields:
            sup = f.support if sup is None else sup.union(f.support)
        self.support = sup or Support()

    def _eval(self, ev, order):
        jets = [_bcast_jet(ev.get(f, order), (), ev.n) for f in self.fields]
        st = Jet.stack(jets, axis=0)
        return st.reshape(*(self.shape + (ev.n,)))

    def diff(self, var):
        return stack([f.diff(var) for f in self.fields], self.shape)

    def component(self, *idx):
        flat = int(np.ravel_multi_index(idx, self.shape)) if len(idx) == len(self.shape) else None
        if flat is not None:
            return self.fields[flat]
        return ComponentField(self, idx)

    def is_zero(self):
        return all(f.is_zero() for f in self.fields)


def stack(fields, shape=None) -> FieldExpr:
    fields = [_as_field(f) for f in fields]
    shape = (len(fields),) if shape is None else tuple(shape)
    if all(isinstance(f, ConstantField) for f in fields):
        return ConstantField(np.array([f.value for f in fields]).reshape(shape))
    if all(isinstance(f, ModulatedField) or f.is_zero() for f in fields):
        terms = []
        for i, f in enumerate(fields):
            if f.is_zero():
                continue
            e = np.zeros(shape)
            e.flat[i] = 1.0
            for t in f.terms:
                terms.append(t.with_M(t.M * e))
        return ModulatedField(terms, shape)
    return StackField(fields, shape)


class DerivativeField(FieldExpr):
    def __init__(self, f: FieldExpr, var: int):
        self.f = f
        self.var = var
        self.shape = f.shape
        self.support = f.support
        self.periodic = f.periodic

    def _eval(self, ev, order):
        return ev.get(self.f, order + 1).diff(self.var)


class TimeIntegralField(FieldExpr):
    """int_0^t f(x, s) ds by Gauss-Legendre in s; t-derivatives are exact.

    Spatial derivatives are integrated node by node.  The t-derivatives of
    the jet come from f itself at time t, so d_t of this field is f.
    """

    def __init__(self, f: FieldExpr, nodes: int = 32):
        self.f = f
        self.nodes = int(nodes)
        self.shape = f.shape
        self.support = f.support

    def _eval(self, ev, order):
        from .jets import _index, multi_indices
        g, w = gauss(self.nodes)
        mi = multi_indices(order)
        out = np.zeros((len(mi),) + self.shape + (ev.n,))
        xi = [i for i, a in enumerate(mi) if a[2] == 0]
        acc = None
        for gi, wi in zip(g, w):
            sub = Evaluator(ev.x, ev.t * gi)
            j = sub.get(self.f, order)
            part = j.c[xi] * (wi * ev.t)
            acc = part if acc is None else acc + part
        out[xi] = acc
        if order >= 1:
            jt = ev.get(self.f, order - 1)
            sidx = _index(order - 1)
            for i, a in enumerate(mi):
                if a[2] >= 1:
                    b = (a[0], a[1], a[2] - 1)
                    out[i] = jt.c[sidx[b]] / a[2]
        return Jet(out, order)

    def diff(self, var):
        if var == T:
            return self.f
        return TimeIntegralField(self.f.diff(var), self.nodes)


class FrozenTimeField(FieldExpr):
    """f(x, t0) viewed as a space-time field constant in t."""

    def __init__(self, f: FieldExpr, t0: float = 0.0):
        self.f = f
        self.t0 = float(t0)
        self.shape = f.shape
        self.support = f.support

    def _eval(self, ev, order):
        from .jets import multi_indices
        sub = Evaluator(ev.x, np.full(ev.n, self.t0))
        j = sub.get(self.f, order)
        c = j.c.copy()
        for i, a in enumerate(multi_indices(order)):
            if a[2]:
                c[i] = 0.0
        return Jet(c, order)

    def diff(self, var):
        if var == T:
            return zero(self.shape)
        return FrozenTimeField(self.f.diff(var), self.t0)


def compose_linear_2d(D: dict, A: np.ndarray, order: int, n: int) -> Jet:
    """Jet of Q(y(x, t)) for y affine in (x1, x2, t) with linear part A (2x3).

    D[(a, b)] holds d1^a d2^b Q at the base points for a + b <= order.
    """
    from math import factorial
    h = []
    for row in range(2):
        c = np.zeros((ncoef_(order), n))
        if order >= 1:
            for v in range(NVAR):
                c[1 + v] = A[row, v]
        h.append(Jet(c, order))
    pw = [[None] * (order + 1) for _ in range(2)]
    for row in range(2):
        pw[row][0] = Jet.constant(np.ones(n), order)
        for k in range(1, order + 1):
            pw[row][k] = pw[row][k - 1] * h[row]
    out = Jet.zeros((n,), order)
    for (a, b), val in D.items():
        if a + b > order:
            continue
        out = out + (pw[0][a] * pw[1][b]) * (np.asarray(val) / (factorial(a) * factorial(b)))
    return out


def ncoef_(order: int) -> int:
    from .jets import ncoef
    return ncoef(order)


class CellField(FieldExpr):
    """Scalar 1-periodic cell function Q(y1, y2) composed with a frame's phases.

    `partials(y1, y2, order)` must return a dict {(a, b): d1^a d2^b Q}.
    """

    def __init__(self, partials, frame: "Frame", name: str = "Q"):
        self.partials = partials
        self.frame = frame
        self.name = name
        self.periodic = True
        self.support = Support.periodic()

    def _eval(self, ev, order):
        y1, y2 = self.frame.phases(ev.x, ev.t)
        D = self.partials(y1, y2, order)
        return compose_linear_2d(D, self.frame.A, order, ev.n)


# --- modulated (separable) fields ------------------------------------------

class Term:
    """coef(x, t) * P1(y1) * P2(y2) * M in the frame of one direction."""

    __slots__ = ("coef", "p1", "p2", "frame", "M")

    def __init__(self, coef, p1: Periodic1D, p2: Periodic1D, frame: Frame, M):
        self.coef = coef            # FieldExpr (scalar) or None for 1
        self.p1, self.p2 = p1, p2
        self.frame = frame
        self.M = np.asarray(M, dtype=float)

    def scaled(self, w: float) -> "Term":
        return Term(self.coef, self.p1, self.p2, self.frame, self.M * w)

    def with_M(self, M) -> "Term":
        return Term(self.coef, self.p1, self.p2, self.frame, M)

    def with_coef(self, coef) -> "Term":
        if coef is None:
            return Term(self.coef, self.p1, self.p2, self.frame, self.M)
        new = coef if self.coef is None else MulField(self.coef, coef)
        return Term(new, self.p1, self.p2, self.frame, self.M)

    def is_zero(self) -> bool:
        return (not np.any(self.M)) or self.p1.is_zero() or self.p2.is_zero() or \
            (self.coef is not None and self.coef.is_zero())


class ModulatedField(FieldExpr):
    """Sum of separable periodic patterns with smooth coefficients."""

    def __init__(self, terms, shape=None):
        terms = [t for t in terms if not t.is_zero()]
        if shape is None:
            if not terms:
                raise FieldError("shape needed for an empty modulated field")
            shape = terms[0].M.shape
        self.shape = tuple(shape)
        for t in terms:
            if t.M.shape != self.shape:
                raise FieldError("term shapes disagree")
        self.terms = terms
        self.periodic = all(t.coef is None for t in terms)
        if self.periodic:
            self.support = Support.periodic()
        else:
            sup = None
            for t in terms:
                s = t.coef.support if t.coef is not None else Support()
                sup = s if sup is None else sup.union(s)
            self.support = sup or Support()

    def is_zero(self):
        return not self.terms

    def _eval(self, ev, order):
        out = Jet.zeros(self.shape + (ev.n,), order)
        tail = (1,) * len(self.shape)
        for t in self.terms:
            j = ev.periodic_jet(t.p1, t.frame, 0, order) * ev.periodic_jet(t.p2, t.frame, 1, order)
            if t.coef is not None:
                j = j * ev.get(t.coef, order)
            jm = Jet(j.c.reshape((j.c.shape[0],) + tail + (ev.n,)), order)
            out = out + jm * t.M.reshape(self.shape + (1,))
        return out

    def diff(self, var):
        terms = []
        for t in self.terms:
            if t.coef is not None:
                dc = t.coef.diff(var)
                if not dc.is_zero():
                    terms.append(Term(dc, t.p1, t.p2, t.frame, t.M))
            a1, a2 = t.frame.A[0, var], t.frame.A[1, var]
            if a1 != 0:
                terms.append(Term(t.coef, t.p1.derivative(), t.p2, t.frame, t.M * a1))
            if a2 != 0:
                terms.append(Term(t.coef, t.p1, t.p2.derivative(), t.frame, t.M * a2))
        return ModulatedField(terms, self.shape)

    def component(self, *idx):
        return ModulatedField([t.with_M(t.M[idx]) for t in self.terms], self.shape[len(idx):])

    def times(self, coef: FieldExpr | None) -> "ModulatedField":
        """Multiply every term by a scalar coefficient field."""
        if coef is None:
            return self
        return ModulatedField([t.with_coef(coef) for t in self.terms], self.shape)

    def dot_const(self, v) -> "ModulatedField":
        """Contract the last component axis with a constant vector."""
        v = np.asarray(v, dtype=float)
        return ModulatedField([t.with_M(t.M @ v) for t in self.terms], self.shape[:-1])

    def outer_const(self, v, left: bool = False) -> "ModulatedField":
        v = np.asarray(v, dtype=float)
        if left:
            return ModulatedField([t.with_M(np.multiply.outer(v, t.M)) for t in self.terms],
                                  v.shape + self.shape)
        return ModulatedField([t.with_M(np.multiply.outer(t.M, v)) for t in self.terms],
                              self.shape + v.shape)

    def frames(self):
        out = []
        for t in self.terms:
            if t.frame not in out:
                out.append(t.frame)
        return out

    def by_frame(self, frame):
        return ModulatedField([t for t in self.terms if t.frame == frame], self.shape)

    def __mul__(self, other):
        if np.isscalar(other):
            return ModulatedField([t.scaled(float(other)) for t in self.terms], self.shape)
        other = _as_field(other)
        if isinstance(other, ConstantField) and not other.shape:
            return self * float(other.value)
        if not other.shape:
            return self.times(other)
        return MulField(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __add__(self, other):
        other = _as_field(other)
        if other.is_zero():
            return self
        if isinstance(other, ModulatedField):
            return ModulatedField(self.terms + other.terms, self.shape)
        return SumField([self, other], [1.0, 1.0])


# --- algebra helpers --------------------------------------------------------

def outer(a, b) -> FieldExpr:
    a, b = _as_field(a), _as_field(b)
    if a.is_zero() or b.is_zero():
        return zero((2, 2))
    if isinstance(a, ModulatedField) and isinstance(b, ConstantField):
        return a.outer_const(b.value)
    if isinstance(b, ModulatedField) and isinstance(a, ConstantField):
        return b.outer_const(a.value, left=True)
    if isinstance(a, ModulatedField) and isinstance(b, ModulatedField) and \
            all(ta.frame == tb.frame for ta in a.terms for tb in b.terms):
        return modulated_product(a, b, np.multiply.outer)
    return OuterField(a, b)


def modulated_product(a: ModulatedField, b: ModulatedField, combine) -> ModulatedField:
    """Termwise product of two modulated fields sharing one frame."""
    terms = []
    for ta in a.terms:
        for tb in b.terms:
            if ta.coef is None:
                coef = tb.coef
            elif tb.coef is None:
                coef = ta.coef
            else:
                coef = MulField(ta.coef, tb.coef)
            terms.append(Term(coef, ta.p1 * tb.p1, ta.p2 * tb.p2, ta.frame, combine(ta.M, tb.M)))
    shape = combine(np.zeros(a.shape), np.zeros(b.shape)).shape
    return ModulatedField(terms, shape)


def dot(a, b) -> FieldExpr:
    a, b = _as_field(a), _as_field(b)
    if a.is_zero() or b.is_zero():
        return zero(a.shape[:-1])
    if isinstance(a, ModulatedField) and isinstance(b, ConstantField):
        return a.dot_const(b.value)
    return DotField(a, b)


def sym(R: FieldExpr) -> FieldExpr:
    return 0.5 * (R + transpose(R))


def transpose(R: FieldExpr) -> FieldExpr:
    if isinstance(R, ModulatedField):
        return ModulatedField([t.with_M(t.M.T) for t in R.terms], R.shape)
    return stack([R[0, 0], R[1, 0], R[0, 1], R[1, 1]], (2, 2))


def trace(R: FieldExpr) -> FieldExpr:
    return R[0, 0] + R[1, 1]


def traceless(R: FieldExpr) -> FieldExpr:
    """R - (1/2) tr(R) I."""
    tr = trace(R)
    if tr.is_zero():
        return R
    return R - outer_identity(tr)


def outer_identity(f: FieldExpr) -> FieldExpr:
    """f * I / 2 for a scalar field f."""
    if isinstance(f, ModulatedField):
        return ModulatedField([t.with_M(0.5 * t.M * np.eye(2)) for t in f.terms], (2, 2))
    return f * ConstantField(0.5 * np.eye(2))


# --- calculus -----------------------------------------------------------------

def grad(f: FieldExpr) -> FieldExpr:
    if f.shape != ():
        raise FieldError("grad expects a scalar field")
    return stack([f.diff(X1), f.diff(X2)])


def perp_grad(f: FieldExpr) -> FieldExpr:
    if f.shape != ():
        raise FieldError("perp_grad expects a scalar field")
    return stack([f.diff(X2), -1.0 * f.diff(X1)])


def div(u: FieldExpr) -> FieldExpr:
    if u.shape == (2,):
        return u.component(0).diff(X1) + u.component(1).diff(X2)
    if u.shape == (2, 2):
        return stack([u.component(i, 0).diff(X1) + u.component(i, 1).diff(X2) for i in (0, 1)])
    raise FieldError("div expects a vector or tensor field")


def curl(u: FieldExpr) -> FieldExpr:
    if u.shape != (2,):
        raise FieldError("curl expects a vector field")
    return u.component(1).diff(X1) - u.component(0).diff(X2)


def time_derivative(f: FieldExpr) -> FieldExpr:
    return f.diff(T)


def calculus(field: FieldExpr, op: str) -> FieldExpr:
    ops = {"grad": grad, "div": div, "curl": curl, "perp_grad": perp_grad,
           "time_derivative": time_derivative}
    if op not in ops:
        raise FieldError(f"unknown operator {op}")
    return ops[op](field)


# --- norms and quadrature -----------------------------------------------------

def _pointwise_norm(v: np.ndarray, ndim: int) -> np.ndarray:
    if ndim == 0:
        return np.abs(v)
    axes = tuple(range(ndim))
    return np.sqrt(np.sum(v * v, axis=axes))


def _cell_rule(p1: list, p2: list, scale: int = 1):
    """Tensor Gauss rule on [0,1)^2 from the panel structure of two profiles."""
    def rule(ps):
        pts = sorted(set([0.0, 1.0] + [float(b) for p in ps for b in p.breakpoints()]))
        ys, ws = [], []
        for a, b in zip(pts[:-1], pts[1:]):
            if b <= a:
                continue
            n = max([p.nodes_on(a, b) for p in ps] + [2]) * scale
            g, w = gauss(min(n, 600))
            ys.append(a + (b - a) * g)
            ws.append((b - a) * w)
        return np.concatenate(ys), np.concatenate(ws)
    y1, w1 = rule(p1)
    y2, w2 = rule(p2)
    return y1, w1, y2, w2


def _periodic_cell_norm(field: ModulatedField, s: float, t: float, scale: int) -> float:
    frames = field.frames()
    if len(frames) != 1 or not field.periodic:
        raise FieldError("cell fast path needs a single-frame periodic field")
    y1, w1, y2, w2 = _cell_rule([tm.p1 for tm in field.terms], [tm.p2 for tm in field.terms], scale)
    # phases at time t: y1 shifts by -lam omega t; the cell integral is invariant,
    # so integrate over one cell in phase variables directly
    vals = 0.0
    for tm in field.terms:
        a = tm.p1(y1)
        b = tm.p2(y2)
        vals = vals + np.multiply.outer(tm.M, np.multiply.outer(a, b))
    nv = _pointwise_norm(np.asarray(vals), len(field.shape))
    W = np.multiply.outer(w1, w2)
    if np.isinf(s):
        return float(nv.max())
    return float(np.sum(W * nv ** s) ** (1.0 / s))


def ls_norm(field: FieldExpr, s: float, domain: Support | str | None = None, t: float = 0.0,
            rtol: float = 1e-6) -> float:
    """L^s norm of a field at time t over a periodic cell or a compact box.

    Periodic single-frame fields use the separable cell rule in phase
    variables.  Compact fields use composite tensor Gauss-Legendre over the
    box, doubling panels until the relative change is below rtol.
    """
    if isinstance(domain, str):
        domain = Support.periodic() if domain == "periodic" else None
    domain = domain or field.support
    if field.is_zero():
        return 0.0
    if domain.kind == "periodic":
        if isinstance(field, ModulatedField) and len(field.frames()) == 1:
            return _periodic_cell_norm(field, s, t, 2)
        return _box_norm(field, s, (0.0, 1.0), t, rtol)
    if domain.kind == "compact":
        K = domain.box
        return _box_norm(field, s, (-K, K), t, rtol)
    raise FieldError("norm needs a periodic or compact domain")


def _box_norm(field, s, interval, t, rtol, start=16):
    a, b = interval
    g, w = gauss(12)
    n = start
    prev = None
    while True:
        edges = np.linspace(a, b, n + 1)
        h = np.diff(edges)
        x1 = (edges[:-1, None] + h[:, None] * g).ravel()
        wx = (h[:, None] * w).ravel()
        X, Y = np.meshgrid(x1, x1, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()])
        vals = []
        for chunk in np.array_split(np.arange(pts.shape[1]), max(1, pts.shape[1] // 20000)):
            vals.append(field(pts[:, chunk], t))
        v = np.concatenate(vals, axis=-1)
        nv = _pointwise_norm(v, len(field.shape))
        W = np.multiply.outer(wx, wx).ravel()
        if np.isinf(s):
            val = float(nv.max())
        else:
            val = float(np.sum(W * nv ** s) ** (1.0 / s))
        if prev is not None and abs(val - prev) <= rtol * max(val, 1e-300):
            return val
        if n >= 256:
            return val
        prev = val
        n *= 2


def c1_norm(f: FieldExpr, K: float, t: float = 0.0, n: int = 201) -> float:
    """max(|f|, |grad f|) sampled on a grid over [-K, K]^2."""
    x = np.linspace(-K, K, n)
    X, Y = np.meshgrid(x, x, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()])
    j = f.jet(pts, t, 1)
    v = np.abs(j.val).max()
    gmax = np.sqrt(j.c[1 + X1] ** 2 + j.c[1 + X2] ** 2).max()
    return float(max(v, gmax))


def _oscillating_integral(f: FieldExpr, g: FieldExpr, lam: int, K: float, power: float,
                          absolute: bool, t: float = 0.0, per_cell: int = 16):
    """Integral of (f g(lam x)) over [-K, K]^2 with cell-aligned Gauss rules."""
    ncell = int(round(2 * K * lam))
    gg, ww = gauss(per_cell)
    edges = np.linspace(-K, K, ncell + 1)
    h = np.diff(edges)
    x1 = (edges[:-1, None] + h[:, None] * gg).ravel()
    wx = (h[:, None] * ww).ravel()
    total = 0.0
    rows = max(1, (1 << 18) // x1.size)
    for i0 in range(0, x1.size, rows):
        xa = x1[i0:i0 + rows]
        X, Y = np.meshgrid(xa, x1, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()])
        fv = f(pts, t)
        gv = g(lam * pts, t)
        v = fv * gv
        W = np.multiply.outer(wx[i0:i0 + rows], wx).ravel()
        if absolute:
            total += float(np.sum(W * np.abs(v) ** power))
        else:
            total += float(np.sum(W * v))
    return total


def fast_oscillation_pairing(f: FieldExpr, g: FieldExpr, lam: int, K: float | None = None,
                             t: float = 0.0) -> float:
    """|int f(x) g(lam x) dx| for compact f and mean-zero 1-periodic g."""
    K = K if K is not None else f.support.box
    gmean = _cell_mean(g, t)
    if abs(gmean) > 1e-10:
        raise FieldError("periodic factor must have zero mean")
    return abs(_oscillating_integral(f, g, lam, K, 1.0, False, t))


def _cell_mean(g: FieldExpr, t: float = 0.0, n: int = 64) -> float:
    gg, ww = gauss(n)
    X, Y = np.meshgrid(gg, gg, indexing="ij")
    v = g(np.stack([X.ravel(), Y.ravel()]), t)
    return float(np.sum(np.multiply.outer(ww, ww).ravel() * v))


def fast_oscillation_bound(f: FieldExpr, g: FieldExpr, lam: int, K: float | None = None,
                           t: float = 0.0) -> float:
    """4 sqrt(2) K^2 |f|_{C^1} |g|_{L^1(T^2)} / lam."""
    K = K if K is not None else f.support.box
    gl1 = ls_norm(g, 1.0, Support.periodic(), t)
    return 4.0 * np.sqrt(2.0) * K ** 2 * c1_norm(f, K, t) * gl1 / lam


# calibrated once on a smooth bump and sin(2 pi x1): see improved_holder_gap
_HOLDER_C = {}


def improved_holder_gap(f: FieldExpr, g: FieldExpr, lam: int, s: float, K: float | None = None,
                        t: float = 0.0, C: float | None = None):
    """(|f g_lam|_{L^s}, |f|_{L^s}|g|_{L^s} + C (2K)^{2/s} lam^{-1/s} |f|_{C^1} |g|_{L^s}).

    The constant C is calibrated once per exponent s (see `holder_constant`).
    """
    K = K if K is not None else f.support.box
    if np.isinf(s):
        lhs = _sup_product(f, g, lam, K, t)
        rhs = ls_norm(f, np.inf, Support.compact(K), t) * _cell_sup(g, t)
        return lhs, rhs
    lhs = _oscillating_integral(f, g, lam, K, s, True, t) ** (1.0 / s)
    fs = ls_norm(f, s, Support.compact(K), t)
    gs = ls_norm(g, s, Support.periodic(), t)
    C = holder_constant(s) if C is None else C
    rhs = fs * gs + C * (2 * K) ** (2.0 / s) * lam ** (-1.0 / s) * c1_norm(f, K, t) * gs
    return lhs, rhs


def holder_constant(s: float) -> float:
    """Calibrated constant of the improved Holder inequality at exponent s.

    Measured as the largest normalized gap over lam in {2, 4, 8} for a smooth
    bump against |sin(2 pi x1)|-type oscillation, times a safety factor 2.
    """
    if s in _HOLDER_C:
        return _HOLDER_C[s]
    from .profiles import SmoothStep
    step = SmoothStep()
    r2 = Coordinate(X1) * Coordinate(X1) + Coordinate(X2) * Coordinate(X2)
    f = ComposeField(r2, "user0", derivs=lambda v, n: step.derivs(v, n))
    f.support = Support.compact(1.0)
    g = ComposeField(2 * np.pi * Coordinate(X1), "sin") + 1.0
    gs = ls_norm(g, s, Support.periodic())
    fs = ls_norm(f, s, Support.compact(1.0))
    c1 = c1_norm(f, 1.0)
    best = 0.0
    for lam in (2, 4, 8):
        lhs = _oscillating_integral(f, g, lam, 1.0, s, True) ** (1.0 / s)
        gap = (lhs - fs * gs) / ((2.0) ** (2.0 / s) * lam ** (-1.0 / s) * c1 * gs)
        best = max(best, abs(gap))
    _HOLDER_C[s] = 2.0 * best
    return _HOLDER_C[s]


def _sup_product(f, g, lam, K, t, n=401):
    x = np.linspace(-K, K, n)
    X, Y = np.meshgrid(x, x, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()])
    return float(np.abs(f(pts, t) * g(lam * pts, t)).max())


def _cell_sup(g, t, n=401):
    x = np.linspace(0, 1, n)
    X, Y = np.meshgrid(x, x, indexing="ij")
    return float(np.abs(g(np.stack([X.ravel(), Y.ravel()]), t)).max())


# --- raw field dumps ----------------------------------------------------------

def dump_field(field: FieldExpr, path, extent, resolution: int, t: float = 0.0) -> Path:
    """Write field values on a uniform grid as little-endian float64 plus a JSON header.

    The grid covers [extent[0], extent[1]]^2 with `resolution` points per axis,
    row-major with x1 the slow index and components last.
    """
    path = Path(path)
    x = np.linspace(extent[0], extent[1], resolution)
    X, Y = np.meshgrid(x, x, indexing="ij")
    vals = field(np.stack([X.ravel(), Y.ravel()]), t)
    comp = int(np.prod(field.shape)) if field.shape else 1
    arr = np.moveaxis(vals.reshape((comp, resolution * resolution)), 0, -1)
    arr.astype("<f8").tofile(path)
    header = {"extent": [float(extent[0]), float(extent[1])], "resolution": int(resolution),
              "rank": field.rank, "components": comp, "time": float(t),
              "dtype": "float64", "byteorder": "little", "order": "row-major (x1, x2, component)"}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(header, indent=2, sort_keys=True))
    return path


def load_field(path):
    path = Path(path)
    header = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    n = header["resolution"]
    data = np.fromfile(path, dtype="<f8").reshape(n, n, header["components"])
    return data, header
