import numpy as np
import pytest

from hardyci.fields import ComposeField, Coordinate, div, ls_norm, perp_grad, stack, zero
from hardyci.geometry import gamma_decompose
from hardyci.params import ParamSet, ParameterError
from hardyci.perturbation import (EnergyProfile, HypothesisError, ReynoldsState, assemble_coefficients,
                                  assemble_perturbation, choose_epsilon, choose_kappa, cutoff, leray_project,
                                  tail_l1, vortex_state, zero_state)
from hardyci.sampling import PhaseSampler

P = ParamSet.desk(8, 64.0)
E1 = EnergyProfile.constant(1.0)
RNG = np.random.default_rng(0)


@pytest.fixture(scope="module")
def bundle():
    return assemble_perturbation(zero_state(1.0), E1, P, check=False)


def _state_with_R(R):
    return ReynoldsState(zero((2,)), zero(), R, zero((2,)), zero_state().energy, 0, 1.0,
                         {"R_L1": 0.0, "r_L2": 0.0, "u_L2": 0.0})


def test_energy_profiles():
    with pytest.raises(ParameterError):
        EnergyProfile.constant(1.2)
    with pytest.raises(ParameterError):
        EnergyProfile.affine(1.0, 0.4)
    s = EnergyProfile.smooth_step(1.0, 0.8, 0.5, 1.0)
    t = np.linspace(0, 0.5, 11)
    assert np.all(s(t) == 1.0) and s(1.0) == pytest.approx(0.8)
    assert s.nonincreasing() and not EnergyProfile.affine(0.6, 0.9).nonincreasing()
    tab = EnergyProfile.table([0, 0.5, 1.0], [1.0, 0.9, 0.6])
    assert tab(0.5) == pytest.approx(0.9) and tab.nonincreasing()
    assert tab.spec() == {"kind": "table", "args": [[0, 0.5, 1.0], [1.0, 0.9, 0.6]]}


def test_choose_kappa_examples():
    assert choose_kappa(zero((2, 2)), P.eta)[0] == 1
    chi2 = cutoff(2)
    R = stack([chi2, zero(), zero(), -1.0 * chi2], (2, 2))
    R.support = chi2.support
    k, tail, capped = choose_kappa(R, P.eta)
    assert k == 3 and tail == 0.0 and not capped


def test_choose_kappa_gaussian_tail_matches_closed_form():
    g = ComposeField(-0.5 * (Coordinate(0) * Coordinate(0) + Coordinate(1) * Coordinate(1)), "exp")
    R = stack([g, zero(), zero(), -1.0 * g], (2, 2))
    closed = lambda k: 2 * np.pi * np.sqrt(2.0) * np.exp(-k * k / 2)
    expect = next(k for k in range(1, 20) if closed(k) <= P.eta / 2)
    k, tail, _ = choose_kappa(R, P.eta, t_samples=(0.0,))
    assert k == expect == 4
    assert tail == pytest.approx(closed(4), rel=1e-6)
    assert tail_l1(R, 3.0) == pytest.approx(closed(3), rel=1e-6)


def test_choose_epsilon():
    eps = choose_epsilon(1, 1.0)
    assert eps == pytest.approx(0.9 / (2560 * np.pi))
    assert 20 * np.pi * 4 * eps < 1 / 32
    assert np.sqrt(10 * np.pi) * (2 * np.sqrt(eps) + 1.0) <= 10.0
    assert choose_epsilon(1, 0.5) >= eps / 2 - 1e-18


def test_coefficients_for_zero_error():
    co = assemble_coefficients(zero_state(1.0), E1, P)
    x = RNG.uniform(-2.2, 2.2, (2, 1000))
    t = RNG.uniform(0, 1, 1000)
    g = gamma_decompose(np.eye(2)).gamma
    base = co.chi(x, t) * np.sqrt(co.gamma(np.zeros((2, 1000)), t) + 10 * co.epsilon)
    for k in range(4):
        assert np.abs(co.a[k](x, t) - base * g[k]).max() <= 1e-14
    out = x[:, np.linalg.norm(x, axis=0) > co.kappa + 1]
    for k in range(4):
        assert np.all(co.a[k](out, 0.5) == 0.0)
    bound = np.sqrt(10 * np.pi) * ((co.kappa + 1) * np.sqrt(co.epsilon) + np.sqrt(P.delta))
    for k in range(4):
        assert ls_norm(co.a[k], 2.0, t=0.3) <= bound


def test_coefficient_reconstruction_with_synthetic_error():
    g = ComposeField(-1.5 * (Coordinate(0) * Coordinate(0) + Coordinate(1) * Coordinate(1)), "exp")
    R0 = stack([0.02 * g, 0.01 * g, 0.01 * g, -0.01 * g], (2, 2))
    co = assemble_coefficients(_state_with_R(R0), E1, P, check=False, kappa=1)
    from hardyci.geometry import unit_dyads
    x = RNG.uniform(-2, 2, (2, 1000))
    t = RNG.uniform(0, 1, 1000)
    lhs = np.einsum("kij,kn->ijn", unit_dyads(), np.stack([a(x, t) for a in co.a_sq]))
    chi2 = co.chi(x, t) ** 2
    rhs = chi2 * (co.rho(x, t) * np.eye(2)[:, :, None] + co.R0c(x, t))
    assert np.abs(lhs - rhs).max() <= 1e-9 * np.abs(rhs).max()
    # rho dominates R0c by the factor 10, so I + R0c/rho stays in the admissible ball
    ratio = np.linalg.norm(co.R0c(x, t), axis=(0, 1)) / co.rho(x, t)
    assert ratio.max() < 0.125


def test_hypothesis_violation_is_reported():
    with pytest.raises(HypothesisError, match="energy_upper_margin"):
        assemble_coefficients(zero_state(0.5), E1, ParamSet.desk(8, 64.0, delta=0.5, eta=0.5 / 64))


def test_perturbation_decomposition(bundle):
    b = bundle
    x = PhaseSampler(P, 2.0, 0.35).draw(RNG, 1000)
    t = np.full(1000, 0.35)
    for i, bf in enumerate(b.blocks):
        lhs = perp_grad(b.H[i])(x, t)
        rhs = (bf.Wp.times(b.a[i]) + bf.Wc.times(b.a[i]) + bf.Wcc_par.times(b.b1[i])
               + bf.Wcc_perp.times(b.b2[i]))(x, t)
        assert np.abs(lhs - rhs).max() <= 1e-7 * np.abs(rhs).max()
    w = b.w(x, t)
    assert np.abs(w - (b.u_p + b.u_c)(x, t)).max() <= 1e-9 * np.abs(w).max()
    scale = np.abs(b.u_p.diff(0)(x, t)).max()
    assert np.abs(div(b.w)(x, t)).max() <= 1e-12 * scale
    assert b.v.is_zero()


def test_principal_perturbation_l2(bundle):
    from hardyci.twoscale import TwoScaleEngine
    eng = TwoScaleEngine(P, t=0.4)
    sq = sum(eng.l2_squared(bf.Wp.times(bundle.a[i])) for i, bf in enumerate(bundle.blocks))
    assert np.sqrt(sq) <= 10 * np.sqrt(P.delta)


def test_leray_projection():
    g = ComposeField(-2.0 * (Coordinate(0) * Coordinate(0) + (Coordinate(1) - 0.2) * (Coordinate(1) - 0.2)), "exp")
    x = RNG.uniform(-2, 2, (2, 500))
    sol = perp_grad(g)
    sol.support = type(sol.support).compact(3.0)
    L = leray_project(sol, half_width=8.0, n=128)
    assert np.abs(L(x) - sol(x, 0.0)).max() <= 1e-6 * np.abs(sol(x, 0.0)).max()
    grd = stack([g.diff(0), g.diff(1)])
    grd.support = type(grd.support).compact(3.0)
    L = leray_project(grd, half_width=8.0, n=128)
    assert np.sqrt(np.mean(L(x) ** 2)) <= 1e-6 * np.sqrt(np.mean(grd(x, 0.0) ** 2))
    bump = stack([g * Coordinate(1), g * (1.0 + Coordinate(0))])
    bump.support = type(bump.support).compact(3.0)
    L1 = leray_project(bump, half_width=8.0, n=128)
    dv = div(L1.field)(x, 0.0)
    assert np.abs(dv).max() <= 1e-6 * np.abs(bump(x, 0.0)).max()
    L2 = leray_project(L1.field, half_width=8.0, n=128)
    assert np.abs(L2(x) - L1(x)).max() <= 1e-6 * np.abs(L1(x)).max()


def test_vortex_state_is_stationary():
    from hardyci.fields import grad, outer
    s = vortex_state(0.5)
    x = RNG.uniform(-3, 3, (2, 500))
    res = (s.u.diff(2) + div(outer(s.u, s.u)) + grad(s.p))(x, 0.3)
    assert np.abs(res).max() <= 1e-14
    assert s.energy(np.zeros((2, 1)), np.array([0.2]))[0] == pytest.approx(0.5)
    assert ls_norm(s.u, 2.0, type(s.u.support).compact(8.0)) ** 2 == pytest.approx(0.5, rel=1e-8)
