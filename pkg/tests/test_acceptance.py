"""Acceptance suite: one group of tests per criterion, summarized at the end of the run."""
import time

import numpy as np
import pytest

from hardyci.blocks import make_blocks, verify_disjointness
from hardyci.fields import _cell_rule, ls_norm
from hardyci.params import ParamSet, delta_n, eta_n
from hardyci.perturbation import EnergyProfile, assemble_perturbation, zero_state

P = ParamSet.desk(8, 64.0)
crit = pytest.mark.criterion


# --- 1 ----------------------------------------------------------------------------------

@crit(1)
def test_identity_suite(record_property):
    from hardyci.verify import run_identity_suite
    tic = time.perf_counter()
    checks = run_identity_suite(P, n=1000, seed=0, tol=1e-7, defect=False)
    dt = time.perf_counter() - tic
    worst = max(checks, key=lambda c: c.residual / max(c.tol, 1e-300))
    record_property("detail", f"{len(checks)} checks, worst {worst.name} = {worst.residual:.2e}, {dt:.0f} s")
    for c in checks:
        assert c.passed, (c.name, c.residual, c.detail)
        assert c.samples >= 1000 or c.name == "disjoint supports"
    assert dt <= 300


# --- 2 ----------------------------------------------------------------------------------

def _cell_integral(F):
    out = 0.0
    for tm in F.terms:
        y1, w1, y2, w2 = _cell_rule([tm.p1], [tm.p2], 1)
        out = out + float(np.sum(w1 * tm.p1(y1))) * float(np.sum(w2 * tm.p2(y2))) * tm.M
    return out


@crit(2)
def test_block_moments(record_property):
    worst_m, worst_z = 0.0, 0.0
    for k in (1, 2, 3, 4):
        bf = make_blocks(k, P)
        h = bf.direction.hat
        worst_m = max(worst_m, abs(ls_norm(bf.w, 2.0, "periodic") ** 2 - 1.0),
                      float(np.abs(bf.moment() - np.outer(h, h)).max()))
        for name, F in bf.mean_zero_blocks().items():
            worst_z = max(worst_z, float(np.abs(_cell_integral(F)).max()))
    record_property("detail", f"moment error {worst_m:.1e}, largest mean {worst_z:.1e}")
    assert worst_m <= 1e-8 and worst_z <= 1e-9


# --- 3 ----------------------------------------------------------------------------------

@crit(3)
def test_disjoint_supports(record_property):
    ts = np.linspace(0, 1, 8, endpoint=False)
    gaps = []
    for lam in (4, 8):
        for kappa in (1, 2):
            for mu1 in (64.0, 128.0):
                rep = verify_disjointness(ParamSet.desk(lam, mu1), ts, kappa)
                assert rep.disjoint, (lam, kappa, mu1, rep.worst_pair)
                gaps.append(rep.min_gap / rep.required_gap)
    bad = verify_disjointness(ParamSet.desk(8, 2.0), ts, 2)
    record_property("detail", f"smallest gap / 2r = {min(gaps):.2f}; mu1 = 2 overlaps at {bad.worst_pair}")
    assert not bad.disjoint


# --- 4 ----------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def sweep_result():
    from hardyci.scheduler import choose_parameters
    from hardyci.twoscale import sweep
    ch = choose_parameters(0.75)
    tic = time.perf_counter()
    res = sweep([8, 16, 32, 64], ch.alpha, ch.beta, 0.75, N=2)
    res["seconds"] = time.perf_counter() - tic
    return res


@crit(4)
@pytest.mark.parametrize("q", ["u_c_L2", "u_t_L2", "R_quad_L1", "R_time_L1", "curl_w_atom"])
def test_exponent(q, sweep_result, record_property):
    f = sweep_result["fits"][q]
    record_property("detail", f"slope {f['slope']:+.3f} vs {f['predicted']:+.3f}")
    assert abs(f["slope"] - f["predicted"]) <= 0.1
    assert sweep_result["seconds"] <= 1800


@crit(4)
@pytest.mark.xfail(strict=True, reason="the energy excess is not a single power over lam = 8..64: "
                                         "per-octave slopes drift from -1.48 toward the lam^(-1/2) "
                                         "rate of the u^p . u^t cross term")
def test_exponent_energy_excess(sweep_result, record_property):
    f = sweep_result["fits"]["energy_excess"]
    record_property("detail", f"slope {f['slope']:+.3f} vs {f['predicted']:+.3f}")
    assert abs(f["slope"] - f["predicted"]) <= 0.1


# --- 5 ----------------------------------------------------------------------------------

@crit(5)
def test_defect_equation(record_property):
    from hardyci.error import assemble_new_error, defect_residual, sample_grid
    s0 = zero_state(1.0)
    b = assemble_perturbation(s0, EnergyProfile.constant(1.0), P, check=False)
    s1, _ = assemble_new_error(s0, b, P)
    rep = defect_residual(s1, s0, P, grid=sample_grid(P, b.coeffs.kappa, n=16, nt=8, seed=0))
    record_property("detail", f"relative residual {rep.relative:.2e} at {rep.points} points, "
                              f"largest term {rep.worst_term}, relative div u1 {rep.div_u_relative:.1e}")
    assert rep.points == 16 * 16 * 8
    assert rep.relative <= 1e-4


# --- 6 ----------------------------------------------------------------------------------

@crit(6)
def test_schedule_arithmetic():
    for n in range(0, 40):
        assert 362 * eta_n(n) == delta_n(n + 1) / 32


@crit(6)
def test_margin_log_three_steps(record_property, tmp_path):
    from hardyci.scheduler import iterate
    log = iterate(EnergyProfile.constant(1.0), steps=3, n=256, t_grid=(0.5,), mode="trend")
    assert [s.n for s in log.steps] == [0, 1, 2]
    for s in log.steps:
        assert set(s.conclusions) == {"i", "ii", "iii", "iv", "v", "vi"}
        for c in s.conclusions.values():
            assert np.isfinite(c["margin"]) and c["margin"] == pytest.approx(c["bound"] - c["value"])
        assert {"energy_lower_margin", "energy_upper_margin", "r_margin", "ok"} <= set(s.next_hypotheses)
    assert all(log.bookkeeping.values())
    path = log.write(tmp_path / "iterate.json")
    record_property("detail", "passing conclusions per step: " + ", ".join(
        str(sum(c["pass"] for c in s.conclusions.values())) + "/6" for s in log.steps))
    assert path.stat().st_size > 0


# --- 7 ----------------------------------------------------------------------------------

@crit(7)
def test_weak_l1_integral_and_pairing(record_property):
    from hardyci.hardy import weak_l1_demo
    for n in range(1, 11):
        assert weak_l1_demo(n).integral == 1
    errs = [weak_l1_demo(n).pairing_error for n in (2, 4, 8)]
    record_property("detail", "pairing errors " + ", ".join(f"{e:.1e}" for e in errs))
    assert errs[0] > errs[1] > errs[2]


@crit(7)
@pytest.mark.xfail(strict=True, reason="the weak norm of f_n is exactly (2 - 2^(1-n))/n, "
                                         "above 1/n for every n >= 2")
def test_weak_l1_norm_bound(record_property):
    from hardyci.hardy import weak_l1_demo
    vals = {n: weak_l1_demo(n).weak_norm for n in range(1, 11)}
    record_property("detail", f"n * weak norm at n = 10: {float(10 * vals[10]):.4f}")
    for n, v in vals.items():
        assert v * n <= 1, n


# --- 8 ----------------------------------------------------------------------------------

@crit(8)
@pytest.mark.parametrize("l", [0, 1])
def test_hardy_scaling(l, record_property):
    from hardyci.hardy import hp_scaling
    h = hp_scaling(l, 0.75)
    record_property("detail", f"slope {h['slope']:+.3f} vs {h['predicted']:+.3f}")
    assert abs(h["slope"] - h["predicted"]) <= 0.1


# --- 9 ----------------------------------------------------------------------------------

@crit(9)
def test_branching(record_property):
    from hardyci.cli import branching_demo, parse_config
    b = branching_demo(parse_config(""), n_points=32)
    before = max(max(e["max_diff"][k] for k in ("u", "R", "r", "p")) for e in b["before"])
    after = b["after"]["max_diff"]["u"]
    record_property("detail", f"max difference on [0, 1/2] {before:.1e}, u difference at 3/4 {after:.2f}")
    assert before <= 1e-12 and after > 1e-3 * b["after"]["max_diff"]["u_scale"]
    assert all(b["admissible"])
