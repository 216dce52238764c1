"""Parameter balancing and the iteration driver.

The balance table lists every error quantity as a monomial in
(lam, mu1, mu2, omega); with mu1 = lam^alpha, mu2 = lam^(1+alpha) and
omega = lam^beta each becomes a power of lam.  `choose_parameters` picks
(alpha, beta, N) so that all powers are negative and `gamma0` is the
least negative one.

`run_step` performs one perturbation step and logs the six step
conclusions with signed margins (positive = satisfied).  In "strict"
mode a step whose margins fail at the lambda cap raises; in "trend" mode
the failing margins are fitted against lambda and the lambda needed for
compliance is extrapolated.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .error import assemble_new_error
from .fields import curl
from .hardy import calibrate, check_exponent, curl_hp_report
from .params import ParamSet, ParameterError, delta_n, eta_n
from .perturbation import (EnergyProfile, ReynoldsState, assemble_perturbation, vortex_state,
                           zero_state)
from .sampling import PhaseSampler, mc_integral, mc_norm

__all__ = ["ExponentRow", "exponent_table", "choose_parameters", "alpha_threshold", "gamma0",
           "ScheduleError", "StepLog", "IterationLog", "run_step", "iterate", "measure_scaling",
           "bookkeeping_identity", "Choice"]


class ScheduleError(RuntimeError):
    """Input state violates the step hypotheses, or strict mode missed a margin at the cap."""


# --- balance table --------------------------------------------------------------------

@dataclass(frozen=True)
class Pow:
    """A power depending on N or p, with its printed form."""
    label: str
    fn: object

    def __call__(self, N, p):
        return self.fn(N, p)


@dataclass(frozen=True)
class ExponentRow:
    name: str
    norm: str
    monomials: tuple             # each a dict of powers {lam, mu1, mu2, omega}; the row is their sum
    exponent: object             # closed form (alpha, beta, N, p) -> lam-exponent

    def order(self) -> str:
        parts = []
        for m in self.monomials:
            parts.append(" ".join(k if v == 1 else f"{k}^({v.label})" if isinstance(v, Pow)
                                  else f"{k}^({Fraction(v).limit_denominator(64)})"
                                  for k, v in m.items()) or "1")
        return " + ".join(parts)

    def substituted(self, alpha: float, beta: float, N: int, p: float) -> float:
        """lam-exponent obtained by substituting the monomials directly."""
        sub = {"lam": 1.0, "mu1": alpha, "mu2": 1.0 + alpha, "omega": beta}
        vals = []
        for m in self.monomials:
            m = {k: (v(N, p) if callable(v) else v) for k, v in m.items()}
            vals.append(sum(sub[k] * v for k, v in m.items()))
        return max(vals)


def _rows():
    return (
        ExponentRow("u^c", "L2", ({"mu1": 1, "mu2": -1},), lambda a, b, N, p: -1.0),
        ExponentRow("u^t", "L2", ({"omega": -1, "mu1": 0.5, "mu2": 0.5},),
                    lambda a, b, N, p: -b + a + 0.5),
        ExponentRow("energy increment", "abs", ({"mu1": -1 / 6, "mu2": -1 / 6},),
                    lambda a, b, N, p: -a / 3 - 1 / 6),
        ExponentRow("curl w", "Hp", ({"lam": 1, "mu1": Pow("1/2-2/p", lambda N, p: 0.5 - 2 / p), "mu2": 1.5},),
                    lambda a, b, N, p: 2.5 + a * (2 - 2 / p)),
        ExponentRow("curl u^t", "Hp", ({"omega": -1, "lam": 1, "mu1": Pow("1-2/p", lambda N, p: 1 - 2 / p), "mu2": 2},),
                    lambda a, b, N, p: 3 - b + a * (3 - 2 / p)),
        ExponentRow("R^time", "L1", ({"omega": 1, "mu1": 0.5, "mu2": -1.5},),
                    lambda a, b, N, p: b - a - 1.5),
        ExponentRow("r^quad", "Linf", ({"lam": Pow("-N", lambda N, p: -N), "mu1": 1, "mu2": 1},),
                    lambda a, b, N, p: 2 * a + 1 - N),
        ExponentRow("r^Y", "Linf", ({"omega": -1, "lam": Pow("-N", lambda N, p: -N), "mu1": 1, "mu2": 1},),
                    lambda a, b, N, p: -b + 2 * a + 1 - N),
        ExponentRow("r^time", "Linf", ({"lam": Pow("-N", lambda N, p: -N), "mu1": 0.5, "mu2": 0.5},
                                       {"omega": 1, "lam": Pow("-N", lambda N, p: -N), "mu1": 1.5, "mu2": -0.5}),
                    lambda a, b, N, p: max(a + 0.5 - N, b + a - 0.5 - N)),
        ExponentRow("int curl r^quad", "Hp", ({"lam": Pow("1-N", lambda N, p: 1 - N), "mu1": 1, "mu2": 2},),
                    lambda a, b, N, p: 3 * a + 3 - N),
        ExponentRow("int curl r^Y", "Hp", ({"omega": -1, "lam": Pow("1-N", lambda N, p: 1 - N), "mu1": 1, "mu2": 2},),
                    lambda a, b, N, p: -b + 3 * a + 3 - N),
        ExponentRow("int curl r^time", "Hp", ({"lam": Pow("1-N", lambda N, p: 1 - N), "mu1": 0.5, "mu2": 1.5},
                                              {"omega": 1, "lam": Pow("1-N", lambda N, p: 1 - N), "mu1": 1.5, "mu2": 0.5}),
                    lambda a, b, N, p: max(2 * a + 2.5 - N, b + 2 * a + 1.5 - N)),
    )


ROWS = _rows()
N_ROWS = ("r^quad", "r^Y", "r^time", "int curl r^quad", "int curl r^Y", "int curl r^time")


def exponent_table(alpha: float, beta: float, N: int, p: float) -> list:
    """All rows evaluated: dicts with name, norm, order, exponent, substituted, flag (exponent >= 0)."""
    check_exponent(p)
    out = []
    for r in ROWS:
        e = float(r.exponent(alpha, beta, N, p))
        out.append({"name": r.name, "norm": r.norm, "order": r.order(), "exponent": e,
                    "substituted": r.substituted(alpha, beta, N, p), "flag": e >= -1e-12})
    return out


def alpha_threshold(p: float) -> float:
    """alpha above which 5/2 + alpha (2 - 2/p) < 0 (and then 3 + alpha (3 - 2/p) < alpha + 1/2)."""
    check_exponent(p)
    return 2.5 / (2.0 / p - 2.0)


@dataclass(frozen=True)
class Choice:
    alpha: float
    beta: float
    N: int
    threshold: float

    def __iter__(self):
        return iter((self.alpha, self.beta, self.N))


def choose_parameters(p: float, margin: float = 1.1) -> Choice:
    """alpha = margin x threshold, beta = alpha + 1, N smallest with every N-row <= -1/2."""
    thr = alpha_threshold(p)
    # the chained condition 3 + alpha (3 - 2/p) < alpha + 1/2 is the same inequality
    alpha = round(margin * thr, 12)
    beta = alpha + 1.0
    N = 1
    while max(r["exponent"] for r in exponent_table(alpha, beta, N, p) if r["name"] in N_ROWS) > -0.5:
        N += 1
    return Choice(alpha, beta, N, thr)


def gamma0(alpha: float, beta: float, N: int, p: float) -> float:
    """Least negative exponent of the table."""
    tab = exponent_table(alpha, beta, N, p)
    bad = [r["name"] for r in tab if r["flag"]]
    if bad:
        raise ParameterError(f"nonnegative exponents in rows {bad}")
    return max(r["exponent"] for r in tab)


def bookkeeping_identity(n: int) -> bool:
    """40 eta_n + 160 eta_(n-1) + 2 eta_n = 362 eta_n = delta_(n+1)/32, exactly in rationals."""
    e, em = eta_n(n), eta_n(n - 1)
    return 40 * e + 160 * em + 2 * e == 362 * e and 362 * e == delta_n(n + 1) / 32


# --- one step -----------------------------------------------------------------------------

@dataclass
class Measure:
    value: float
    bound: float
    stderr: float = 0.0

    @property
    def margin(self) -> float:
        return self.bound - self.value


@dataclass
class StepLog:
    n: int
    delta: float
    eta: float
    lam: int
    input_kind: str
    conclusions: dict            # "i".."vi" -> dict(value, bound, margin, pass)
    next_hypotheses: dict
    lambdas_tried: list
    trend: dict
    runtime: float
    params: dict = field(default_factory=dict)

    def passed(self) -> bool:
        return all(c["pass"] for c in self.conclusions.values())


@dataclass
class IterationLog:
    p: float
    alpha: float
    beta: float
    N: int
    gamma0: float
    mode: str
    seed: int
    steps: list = field(default_factory=list)
    bookkeeping: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True, default=_jsonable)

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        return path


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, Fraction):
        return str(o)
    return str(o)


def _measure_step(state0: ReynoldsState, state1: ReynoldsState, bundle, params: ParamSet,
                  e: EnergyProfile, t_grid, n: int, seed: int, p: float) -> tuple:
    """Measured values for the six conclusions and the bounds entering the next step."""
    K = bundle.coeffs.kappa + 1.0
    delta, eta = params.delta, params.eta
    du = state1.u - state0.u
    C = calibrate(p)
    rows = {k: [] for k in ("i_lo", "i_hi", "ii", "iii", "iv", "v", "vi")}
    b0 = state0.bounds
    r0, u0n = b0.get("r_L2", 0.0), b0.get("u_L2", 0.0)
    curl_r0 = b0.get("int_curl_r_Hp", 0.0)
    u1_sup = r1_sup = R1_sup = 0.0
    energy_gap = []
    for j, t in enumerate(t_grid):
        smp = PhaseSampler(params, K, t)
        # u1 = u0 + du; u0 is smooth, so int |u1|^2 = int |u0|^2 + 2 int u0.du + int |du|^2
        du2 = mc_norm(du, 2.0, params, K, t, n, seed + j, smp)
        E0 = float(state0.energy(np.zeros((2, 1)), np.array([t]))[0])
        cross = 0.0
        if not state0.u.is_zero():
            cross = 2 * mc_integral(lambda x: np.sum(state0.u(x, t) * du(x, t), axis=0), smp, n,
                                    seed + 100 + j).value
        E1 = E0 + cross + du2.value ** 2
        gap = float(e(t)) - E1
        energy_gap.append((t, gap))
        rows["i_lo"].append(Measure(-gap, -0.375 * delta * float(e(t)), 2 * du2.value * du2.stderr))
        rows["i_hi"].append(Measure(gap, 0.625 * delta * float(e(t)), 2 * du2.value * du2.stderr))
        r1 = mc_norm(state1.r, 2.0, params, K, t, n, seed + 200 + j, smp)
        u1 = np.sqrt(max(E1, 0.0))
        rows["ii"].append(Measure(r1.value + u1 * r1.value, eta, r1.stderr * (1 + u1)))
        # int_0^t curl r1 ds is one compactly supported zero-mean piece in the ball B_(K sqrt 2)
        cr = mc_norm(curl(state1.r), np.inf, params, K, t, n, seed + 300 + j, smp).value
        rad = K * np.sqrt(2.0)
        rows["iii"].append(Measure(C ** p * np.pi * rad ** 2 * (t * cr) ** p, eta))
        R1 = mc_norm(state1.R, 1.0, params, K, t, n, seed + 400 + j, smp)
        rows["iv"].append(Measure(R1.value, eta + 4 * r0 + 2 * r0 * u0n, R1.stderr))
        rows["v"].append(Measure(du2.value, 11.0 * np.sqrt(delta), du2.stderr))
        hp = curl_hp_report(bundle, state0, params, p, t=t, check_disjoint=(j == 0))
        tot = sum(v.atom_bound for v in hp.values())
        rows["vi"].append(Measure(tot, eta + curl_r0))
        u1_sup, r1_sup, R1_sup = max(u1_sup, u1), max(r1_sup, r1.value), max(R1_sup, R1.value)
    concl = {}
    for key in ("i", "ii", "iii", "iv", "v", "vi"):
        ms = rows["i_lo"] + rows["i_hi"] if key == "i" else rows[key]
        worst = min(ms, key=lambda m: m.margin)
        concl[key] = {"value": worst.value, "bound": worst.bound, "margin": worst.margin,
                      "stderr": worst.stderr, "pass": bool(worst.margin >= 0)}
    bounds = {"R_L1": R1_sup, "r_L2": r1_sup, "u_L2": u1_sup,
              "int_curl_r_Hp": max(m.value for m in rows["iii"])}
    return concl, bounds, energy_gap


def _next_hypotheses(bounds: dict, energy_gap, e: EnergyProfile, delta_next: float) -> dict:
    """Step hypotheses at delta_next recomputed from the measured output, not inferred."""
    lo = min(g - 0.75 * delta_next * float(e(t)) for t, g in energy_gap)
    hi = min(1.25 * delta_next * float(e(t)) - g for t, g in energy_gap)
    rhs = 40 * bounds["R_L1"] + bounds["r_L2"] + 2 * bounds["u_L2"] * bounds["r_L2"]
    return {"energy_lower_margin": lo, "energy_upper_margin": hi, "r_condition": rhs,
            "r_margin": delta_next / 32 - rhs,
            "ok": bool(lo >= 0 and hi >= 0 and rhs <= delta_next / 32)}


def run_step(state0: ReynoldsState, e: EnergyProfile, params: ParamSet, lambda_cap: int = 16,
             mode: str = "trend", t_grid=(0.25, 0.75), n: int = 2048, seed: int = 0,
             check_input: bool = True) -> tuple:
    """One step at lam = params.lam, 2 params.lam, ... <= lambda_cap (mu1 and omega held fixed).

    Stops at the first lambda where all six conclusions pass.  In trend mode
    the cap is not an error: the log records the fitted lambda-slope of each
    failing margin and the extrapolated lambda at which it would close.
    """
    if mode not in ("strict", "trend"):
        raise ValueError("mode must be 'strict' or 'trend'")
    p = params.p
    if check_input:
        h = _input_hypotheses(state0, e, params.delta)
        if not h["ok"]:
            raise ScheduleError(f"input state violates the step hypotheses: {h}")
    tic = time.perf_counter()
    lam = params.lam
    tried, history = [], []
    result = None
    while lam <= lambda_cap:
        P = params.with_(lam=lam)
        bundle = assemble_perturbation(state0, e, P, check=False)
        state1, bd = assemble_new_error(state0, bundle, P)
        concl, bounds, gap = _measure_step(state0, state1, bundle, P, e, t_grid, n, seed, p)
        tried.append(lam)
        history.append(concl)
        result = (P, state1, concl, bounds, gap)
        if all(c["pass"] for c in concl.values()):
            break
        lam *= 2
    P, state1, concl, bounds, gap = result
    try:
        g0 = gamma0(params.alpha, params.beta, params.N, p)
    except ParameterError:
        g0 = None
    trend = _trend(tried, history, g0) if mode == "trend" else {}
    if mode == "strict" and not all(c["pass"] for c in concl.values()):
        failing = [k for k, c in concl.items() if not c["pass"]]
        raise ScheduleError(f"conclusions {failing} fail at the lambda cap {lambda_cap}")
    state1.bounds = bounds
    delta_next = params.delta / 2
    log = StepLog(state0.step, params.delta, params.eta, P.lam, str(state0.meta.get("kind", "zero")
                                                                   if state0.meta else "zero"),
                  concl, _next_hypotheses(bounds, gap, e, delta_next), tried, trend,
                  time.perf_counter() - tic, P.as_dict())
    return state1, log


def _input_hypotheses(state: ReynoldsState, e: EnergyProfile, delta: float) -> dict:
    from .perturbation import check_hypotheses
    return check_hypotheses(state, e, delta)


def _trend(lams, history, g0: float | None) -> dict:
    """Per failing conclusion: lam-slope of its value and the lam at which it meets the bound.

    With two or more lambdas the slope is fitted; with one the table rate
    gamma0 is used as the slope (source recorded).
    """
    out = {}
    for key in history[0]:
        last = history[-1][key]
        vals = [h[key]["value"] for h in history]
        if last["pass"] or min(vals) <= 0 or last["bound"] <= 0:
            continue
        if len(lams) > 1:
            s, b = np.polyfit(np.log(lams), np.log(vals), 1)
            src = "fit"
        elif g0 is not None:
            s, b = g0, np.log(vals[0]) - g0 * np.log(lams[0])
            src = "gamma0"
        else:
            continue
        need = float(np.exp((np.log(last["bound"]) - b) / s)) if s < 0 else float("inf")
        out[key] = {"slope": float(s), "slope_source": src, "lambda_needed": need, "values": vals}
    return out


def iterate(e: EnergyProfile, steps: int = 3, lam: int = 8, mu1: float = 64.0, lambda_cap: int = 8,
            mode: str = "trend", p: float = 0.75, n: int = 1024, seed: int = 0,
            t_grid=(0.25, 0.75)) -> IterationLog:
    """Run `steps` steps with delta_n = 2^-n and eta_n = delta_(n+1)/11584.

    Step 0 starts from the zero state.  At desk lambda the output of a step
    does not satisfy the hypotheses of the next one (the margins are logged);
    in trend mode each later step therefore starts from the steady vortex
    with the energy gap delta_n, a valid input at that level.  Strict mode
    chains the actual states and stops at the first hypothesis violation.
    """
    ch = choose_parameters(p)
    log = IterationLog(p, ch.alpha, ch.beta, ch.N, gamma0(ch.alpha, ch.beta, ch.N, p), mode, seed)
    log.bookkeeping = {str(k): bookkeeping_identity(k) for k in range(steps + 1)}
    state = zero_state(1.0)
    for k in range(steps):
        d, et = float(delta_n(k)), float(eta_n(k))
        P = ParamSet.desk(lam, mu1, delta=d, eta=et, p=p, alpha=ch.alpha, beta=ch.beta, N=ch.N)
        if k > 0 and mode == "trend":
            state = vortex_state(d, float(np.min(e(np.linspace(0, 1, 11)))))
        state.step = k
        state.delta = d
        state1, sl = run_step(state, e, P, lambda_cap, mode, t_grid, n, seed + 1000 * k)
        log.steps.append(sl)
        if mode == "strict":
            if not sl.next_hypotheses["ok"]:
                raise ScheduleError(f"step {k} output fails the next hypotheses: {sl.next_hypotheses}")
            state = state1
    return log


# --- scaling ----------------------------------------------------------------------------

def measure_scaling(quantity, lambdas, alpha: float | None = None, beta: float | None = None,
                    p: float = 0.75, N: int = 2) -> dict:
    """Fitted lam-slope of a named two-scale quantity (or a callable lam -> value) vs its prediction."""
    from .twoscale import PREDICTED, TwoScaleEngine, fit_slope
    lams = [int(l) for l in lambdas]
    if len(lams) < 4:
        raise ValueError("need at least 4 lambda values")
    r = np.array(lams[1:], float) / np.array(lams[:-1], float)
    if not np.allclose(r, r[0]):
        raise ValueError("lambda values must be geometric")
    if alpha is None or beta is None:
        alpha, beta, _ = choose_parameters(p)
    if callable(quantity):
        vals = [float(quantity(l)) for l in lams]
        pred = None
    else:
        vals = []
        for l in lams:
            eng = TwoScaleEngine(ParamSet.from_exponents(l, alpha, beta, N, p=p), N=min(N, 2))
            vals.append(float(eng.value(quantity, p)))
        pred = PREDICTED(alpha, beta, p)[quantity]
    if min(vals) <= 0:
        return {"slope": None, "predicted": pred, "residual": None, "values": vals,
                "note": "degenerate values"}
    s, _, res = fit_slope(lams, vals)
    return {"slope": s, "predicted": pred, "residual": res, "values": vals}
