"""Construction parameters shared by the blocks, perturbation and scheduler."""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from fractions import Fraction


class ParameterError(ValueError):
    """Inconsistent or unsupported parameter choice."""


@dataclass(frozen=True)
class ParamSet:
    """All knobs of one convex-integration step.

    mu1, mu2 and omega are normally lam**alpha, lam**(1 + alpha) and
    lam**beta; `desk` builds a set with a moderate mu1 instead, keeping
    mu2 = lam * mu1 so that pointwise assembly stays in double precision.
    """

    p: float = 0.75
    delta: float = 1.0
    eta: float = 1.0 / 64
    kappa: int = 1
    epsilon: float = 1e-4
    alpha: float = 4.125
    beta: float = 5.125
    N: int = 16
    lam: int = 8
    mu1: float = 8.0 ** 4.125
    mu2: float = 8.0 ** 5.125
    omega: float = 8.0 ** 5.125
    gamma0: float | None = None

    def __post_init__(self):
        if not (2.0 / 3.0 < self.p < 1.0):
            raise ParameterError("p must lie in (2/3, 1)")
        if not (0 < self.eta < self.delta / 32):
            raise ParameterError("eta must satisfy 0 < eta < delta/32")
        if int(self.lam) != self.lam or self.lam < 1:
            raise ParameterError("lambda must be a positive integer")
        if self.mu1 <= 1:
            raise ParameterError("mu1 must exceed 1")
        if self.mu2 < self.mu1:
            raise ParameterError("parameter order violated: mu2 < mu1")
        if abs(self.mu2 - self.lam * self.mu1) > 1e-9 * self.mu2:
            raise ParameterError("mu2 must equal lam * mu1")

    @classmethod
    def from_exponents(cls, lam: int, alpha: float, beta: float, N: int, **kw) -> "ParamSet":
        mu1 = float(lam) ** alpha
        return cls(lam=int(lam), alpha=alpha, beta=beta, N=N, mu1=mu1, mu2=lam * mu1,
                   omega=float(lam) ** beta, **kw)

    @classmethod
    def desk(cls, lam: int, mu1: float = 64.0, omega: float | None = None, **kw) -> "ParamSet":
        omega = float(lam) ** 2 if omega is None else float(omega)
        return cls(lam=int(lam), mu1=float(mu1), mu2=lam * float(mu1), omega=omega, **kw)

    def with_(self, **kw) -> "ParamSet":
        if "lam" in kw and "mu2" not in kw:
            kw.setdefault("mu1", self.mu1)
            kw["mu2"] = kw["lam"] * kw["mu1"]
        return replace(self, **kw)

    def as_dict(self) -> dict:
        return asdict(self)


def delta_n(n: int) -> Fraction:
    return Fraction(1, 2 ** n)


def eta_n(n: int) -> Fraction:
    return delta_n(n + 1) / 11584
