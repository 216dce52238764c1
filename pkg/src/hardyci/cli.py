"""Command-line front end: verify, scaling, iterate.

    hardyci verify  [--config FILE] [--out DIR] [--seed N]
    hardyci scaling [--config FILE] [--out DIR]
    hardyci iterate [--config FILE] [--out DIR] [--mode strict|trend] [--seed N]

Each command writes report.csv and report.json into --out.  Reports hold
no timings (those go to timings.json), so equal config and seed give
byte-identical reports.  Config files are INI-style; see
`DEFAULT_CONFIG` for the schema.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .params import ParamSet, ParameterError

__all__ = ["RunConfig", "ConfigError", "load_config", "parse_config", "main", "DEFAULT_CONFIG",
           "cmd_verify", "cmd_scaling", "cmd_iterate"]

DEFAULT_CONFIG = """\
[run]
# integrability exponent of the curl, 2/3 < p < 1
p = 0.75
delta0 = 1.0
steps = 3
# two-scale sweep (geometric)
lambda_list = 8, 16, 32, 64
# desk runs: first lambda, cap for the doubling search, fixed mu1
lambda = 8
lambda_cap = 8
mu1 = 64
mode = trend
seed = 0
samples = 1024
t_grid = 0.25, 0.75

[energy]
# constant | affine | table | smooth_step
kind = constant
value = 1.0

[branch]
# second profile of the branching demo; it must agree with [energy] on [0, t_split]
kind = smooth_step
e0 = 1.0
e1 = 0.8
t0 = 0.5
t1 = 1.0
t_split = 0.5
t_after = 0.75

[grid]
box_n = 256
identity_samples = 1000

[verify]
# none | psi_chain (fault injection for the A/B identity)
inject = none
"""


class ConfigError(ValueError):
    """Configuration problem, with the offending line when known."""


@dataclass
class RunConfig:
    p: float = 0.75
    delta0: float = 1.0
    steps: int = 3
    lambda_list: list = field(default_factory=lambda: [8, 16, 32, 64])
    lam: int = 8
    lambda_cap: int = 8
    mu1: float = 64.0
    mode: str = "trend"
    seed: int = 0
    samples: int = 1024
    t_grid: list = field(default_factory=lambda: [0.25, 0.75])
    energy: dict = field(default_factory=lambda: {"kind": "constant", "value": "1.0"})
    branch: dict = field(default_factory=dict)
    box_n: int = 256
    identity_samples: int = 1000
    inject: str = "none"

    def energy_profile(self, which: str = "energy"):
        return _profile(self.energy if which == "energy" else self.branch)


def _profile(sec: dict):
    from .perturbation import EnergyProfile
    kind = sec.get("kind", "constant")
    f = lambda k, d=None: float(sec[k]) if k in sec else (d if d is not None else _missing(k))
    if kind == "constant":
        return EnergyProfile.constant(f("value", 1.0))
    if kind == "affine":
        return EnergyProfile.affine(f("e0"), f("e1"))
    if kind == "smooth_step":
        return EnergyProfile.smooth_step(f("e0"), f("e1"), f("t0"), f("t1"))
    if kind == "table":
        pts = [tuple(map(float, s.split(":"))) for s in sec["points"].split(",")]
        return EnergyProfile.table([a for a, _ in pts], [b for _, b in pts])
    raise ParameterError(f"unknown energy kind {kind!r}")


def _missing(k):
    raise ConfigError(f"missing key {k!r}")


def _line_of(text: str, section: str, key: str) -> int | None:
    cur = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            cur = s[1:-1].strip()
        elif cur == section and s.split("=")[0].strip() == key:
            return i
    return None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """RunConfig from INI text (defaults fill missing keys); errors name the line."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(DEFAULT_CONFIG)
        user = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        user.read_string(text, source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    for sec in user.sections():
        if not cp.has_section(sec):
            line = next((i for i, ln in enumerate(text.splitlines(), 1) if ln.strip() == f"[{sec}]"), "?")
            raise ConfigError(f"{source}:{line}: unknown section [{sec}]")
        if sec in ("energy", "branch"):
            cp.remove_section(sec)
            cp.add_section(sec)
        for k, v in user.items(sec, raw=True):
            cp.set(sec, k, v)

    def get(sec, key, conv):
        raw = cp.get(sec, key)
        try:
            return conv(raw)
        except (ValueError, ParameterError) as exc:
            line = _line_of(text, sec, key)
            where = f"{source}:{line}" if line else source
            raise ConfigError(f"{where}: [{sec}] {key} = {raw!r}: {exc}") from exc

    flist = lambda s: [float(v) for v in s.split(",")]
    ilist = lambda s: [int(v) for v in s.split(",")]
    cfg = RunConfig(
        p=get("run", "p", float), delta0=get("run", "delta0", float), steps=get("run", "steps", int),
        lambda_list=get("run", "lambda_list", ilist), lam=get("run", "lambda", int),
        lambda_cap=get("run", "lambda_cap", int), mu1=get("run", "mu1", float),
        mode=get("run", "mode", str), seed=get("run", "seed", int), samples=get("run", "samples", int),
        t_grid=get("run", "t_grid", flist), energy=dict(cp.items("energy")),
        branch=dict(cp.items("branch")), box_n=get("grid", "box_n", int),
        identity_samples=get("grid", "identity_samples", int), inject=get("verify", "inject", str))
    _validate(cfg, text, source)
    return cfg


def _validate(cfg: RunConfig, text: str, source: str):
    def fail(sec, key, msg):
        line = _line_of(text, sec, key)
        raise ConfigError(f"{source}:{line or '?'}: [{sec}] {key}: {msg}")

    if not 2.0 / 3.0 < cfg.p < 1.0:
        fail("run", "p", "p must lie in (2/3, 1)")
    if cfg.mode not in ("strict", "trend"):
        fail("run", "mode", "mode must be strict or trend")
    lams = np.asarray(cfg.lambda_list, float)
    if lams.size < 2 or np.any(lams <= 0) or not np.allclose(lams[1:] / lams[:-1], lams[1] / lams[0]):
        fail("run", "lambda_list", "lambda list must be geometric")
    if cfg.inject not in ("none", "psi_chain"):
        fail("verify", "inject", "inject must be none or psi_chain")
    for sec in ("energy", "branch"):
        try:
            _profile(getattr(cfg, sec))
        except (ParameterError, ConfigError, KeyError, ValueError) as exc:
            fail(sec, "kind", str(exc))


def load_config(path) -> RunConfig:
    if path is None:
        return parse_config("", "<defaults>")
    p = Path(path)
    return parse_config(p.read_text(), str(p))


# --- output ----------------------------------------------------------------------------

def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _write(out: Path, rows: list, payload: dict, timings: dict):
    out.mkdir(parents=True, exist_ok=True)
    cols = list(rows[0].keys()) if rows else []
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])
    with open(out / "report.json", "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True, default=_jsonable)
        fh.write("\n")
    with open(out / "timings.json", "w") as fh:
        json.dump(timings, fh, indent=1, sort_keys=True, default=_jsonable)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


# --- commands ----------------------------------------------------------------------------

def _desk(cfg: RunConfig, **kw) -> ParamSet:
    from .scheduler import choose_parameters
    ch = choose_parameters(cfg.p)
    return ParamSet.desk(cfg.lam, cfg.mu1, p=cfg.p, alpha=ch.alpha, beta=ch.beta, N=ch.N, **kw)


def cmd_verify(cfg: RunConfig, out: Path) -> int:
    from .verify import run_identity_suite, suite_ok
    tic = time.perf_counter()
    P = _desk(cfg)
    checks = run_identity_suite(P, cfg.identity_samples, cfg.seed,
                                inject=None if cfg.inject == "none" else cfg.inject)
    rows = [{"check": c.name, "anchor": f"identity: {c.name}", "residual": c.residual, "tol": c.tol,
             "samples": c.samples, "passed": c.passed, "detail": c.detail} for c in checks]
    ok = suite_ok(checks)
    payload = {"command": "verify", "ok": ok, "params": P.as_dict(), "checks": rows,
               "failed": [c.name for c in checks if not c.passed]}
    _write(out, rows, payload, {"total": time.perf_counter() - tic,
                                "checks": {c.name: c.seconds for c in checks}})
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.residual:.3e} (tol {c.tol:g}) {c.detail}")
    return 0 if ok else 1


_SWEEP_TO_ROW = {"u_c_L2": "u^c", "u_t_L2": "u^t", "energy_excess": "energy increment",
                 "curl_w_atom": "curl w", "R_time_L1": "R^time"}


def cmd_scaling(cfg: RunConfig, out: Path, tol: float = 0.1) -> int:
    from .hardy import hp_scaling
    from .scheduler import choose_parameters, exponent_table, gamma0
    from .twoscale import PREDICTED, sweep
    tic = time.perf_counter()
    ch = choose_parameters(cfg.p)
    res = sweep(cfg.lambda_list, ch.alpha, ch.beta, cfg.p, N=2)
    fits = res["fits"]
    rows = []
    measured = {_SWEEP_TO_ROW[k]: v for k, v in fits.items() if k in _SWEEP_TO_ROW}
    for r in exponent_table(ch.alpha, ch.beta, ch.N, cfg.p):
        m = measured.get(r["name"])
        slope = m["slope"] if m else None
        rows.append({"quantity": r["name"], "norm": r["norm"], "anchor": f"{r['name']} in {r['norm']} ~ {r['order']}",
                     "predicted": r["exponent"], "measured": slope,
                     "residual": None if slope is None else slope - r["exponent"],
                     "within_tol": None if slope is None else abs(slope - r["exponent"]) <= tol})
    pred = PREDICTED(ch.alpha, ch.beta, cfg.p)
    q = fits["R_quad_L1"]
    rows.append({"quantity": "R^quad", "norm": "L1", "anchor": "R^quad in L1 ~ 1/lam",
                 "predicted": pred["R_quad_L1"], "measured": q["slope"],
                 "residual": q["slope"] - pred["R_quad_L1"],
                 "within_tol": abs(q["slope"] - pred["R_quad_L1"]) <= tol})
    for l in (0, 1):
        h = hp_scaling(l, cfg.p)
        rows.append({"quantity": f"Hp scaling l={l}", "norm": "Hp", "anchor": "d^l phi(mu x) in Hp ~ mu^(l-2/p)",
                     "predicted": h["predicted"], "measured": h["slope"],
                     "residual": h["slope"] - h["predicted"],
                     "within_tol": abs(h["slope"] - h["predicted"]) <= tol})
    payload = {"command": "scaling", "p": cfg.p, "alpha": ch.alpha, "beta": ch.beta, "N": ch.N,
               "gamma0": gamma0(ch.alpha, ch.beta, ch.N, cfg.p), "lambdas": cfg.lambda_list,
               "rows": rows,
               "points": [{"lam": pt.lam, "values": pt.values} for pt in res["points"]]}
    _write(out, rows, payload, {"total": time.perf_counter() - tic})
    for r in rows:
        ms = "-" if r["measured"] is None else f"{r['measured']:+.3f}"
        print(f"{r['quantity']:>18}: predicted {r['predicted']:+.3f}  measured {ms}")
    return 0


def branching_demo(cfg: RunConfig, n_points: int = 64) -> dict:
    """One step from the zero state under two energy profiles that agree up to t_split."""
    from .error import assemble_new_error
    from .perturbation import assemble_perturbation, zero_state
    e1, e2 = cfg.energy_profile("energy"), cfg.energy_profile("branch")
    ts_ = float(cfg.branch.get("t_split", 0.5))
    ta = float(cfg.branch.get("t_after", 0.75))
    grid = np.linspace(0.0, ts_, 5)
    if np.max(np.abs(e1(grid) - e2(grid))) > 0:
        raise ConfigError("the two energy profiles differ before t_split")
    P = _desk(cfg, delta=cfg.delta0, eta=cfg.delta0 / 2 / 11584)
    fields = []
    for e in (e1, e2):
        s0 = zero_state(cfg.delta0)
        b = assemble_perturbation(s0, e, P, check=False, box_n=cfg.box_n)
        s1, _ = assemble_new_error(s0, b, P)
        fields.append(s1)
    from .sampling import PhaseSampler
    rng = np.random.default_rng(cfg.seed)
    out = {"t_split": ts_, "t_after": ta, "admissible": [e1.nonincreasing(), e2.nonincreasing()],
           "before": [], "after": None}
    K = P.kappa + 1.0
    for t in list(np.linspace(0.0, ts_, 3)) + [ta]:
        x = PhaseSampler(P, K, t).draw(rng, n_points)
        tt = np.full(n_points, t)
        d = {}
        for name in ("u", "R", "r", "p"):
            a, b = getattr(fields[0], name)(x, tt), getattr(fields[1], name)(x, tt)
            d[name] = float(np.max(np.abs(a - b)))
        d["u_scale"] = float(np.max(np.abs(fields[0].u(x, tt))))
        entry = {"t": float(t), "max_diff": d}
        if t <= ts_:
            out["before"].append(entry)
        else:
            out["after"] = entry
    out["agree_before"] = all(max(e["max_diff"][k] for k in ("u", "R", "r", "p")) <= 1e-12
                              for e in out["before"])
    out["differ_after"] = out["after"]["max_diff"]["u"] > 1e-8
    return out


def cmd_iterate(cfg: RunConfig, out: Path) -> int:
    from .scheduler import iterate
    tic = time.perf_counter()
    log = iterate(cfg.energy_profile(), cfg.steps, cfg.lam, cfg.mu1, cfg.lambda_cap, cfg.mode, cfg.p,
                  cfg.samples, cfg.seed, tuple(cfg.t_grid))
    timings = {"steps": [s.runtime for s in log.steps]}
    for s in log.steps:
        s.runtime = 0.0
    b = branching_demo(cfg)
    timings["total"] = time.perf_counter() - tic
    rows = []
    for s in log.steps:
        for key, c in s.conclusions.items():
            rows.append({"step": s.n, "delta": s.delta, "eta": s.eta, "lam": s.lam, "input": s.input_kind,
                         "conclusion": key, "anchor": f"step conclusion ({key})", "value": c["value"],
                         "bound": c["bound"], "margin": c["margin"], "pass": c["pass"]})
    payload = {"command": "iterate", "log": json.loads(log.to_json()), "branching": b}
    _write(out, rows, payload, timings)
    for s in log.steps:
        status = " ".join(f"({k}){'+' if c['pass'] else '-'}" for k, c in s.conclusions.items())
        print(f"step {s.n}: delta={s.delta:g} lam={s.lam} {status}")
    print(f"branching: agree on [0, {b['t_split']}] = {b['agree_before']}, "
          f"differ at {b['t_after']} = {b['differ_after']}")
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="hardyci", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=["verify", "scaling", "iterate", "show-config"])
    ap.add_argument("--config", default=None, help="INI file (defaults: hardyci show-config)")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--mode", choices=["strict", "trend"], default=None)
    ap.add_argument("--seed", type=int, default=None)
    a = ap.parse_args(argv)
    if a.command == "show-config":
        print(DEFAULT_CONFIG, end="")
        return 0
    try:
        cfg = load_config(a.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if a.mode:
        cfg.mode = a.mode
    if a.seed is not None:
        cfg.seed = a.seed
    out = Path(a.out)
    return {"verify": cmd_verify, "scaling": cmd_scaling, "iterate": cmd_iterate}[a.command](cfg, out)


if __name__ == "__main__":
    sys.exit(main())
