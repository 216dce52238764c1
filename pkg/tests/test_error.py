import json

import numpy as np
import pytest

from hardyci.error import (assemble_new_error, defect_residual, norm_report, sample_grid, time_tensor,
                           write_norm_report)
from hardyci.fields import div
from hardyci.jets import T
from hardyci.params import ParamSet
from hardyci.perturbation import EnergyProfile, assemble_perturbation, zero_state
from hardyci.sampling import PhaseSampler

P = ParamSet.desk(8, 64.0)
RNG = np.random.default_rng(5)


@pytest.fixture(scope="module")
def step():
    s0 = zero_state(1.0)
    b = assemble_perturbation(s0, EnergyProfile.constant(1.0), P, check=False)
    s1, bd = assemble_new_error(s0, b, P)
    return s0, b, s1, bd


def _pts(K, t, n=600):
    return PhaseSampler(P, K, t).draw(RNG, n), np.full(n, t)


def test_defect_equation_small_grid(step):
    s0, b, s1, bd = step
    rep = defect_residual(s1, s0, P, grid=sample_grid(P, b.coeffs.kappa, n=6, nt=2, seed=1))
    assert rep.points == 72
    assert rep.relative <= 1e-8
    assert rep.trace_R <= 1e-12 * rep.scale


@pytest.mark.xfail(strict=True, reason="div u1 carries the truncation error of the two-scale "
                                         "cell potential of u^t, about 1e-2 relative at desk scale")
def test_new_velocity_strictly_divergence_free(step):
    s0, b, s1, bd = step
    rep = defect_residual(s1, s0, P, grid=sample_grid(P, b.coeffs.kappa, n=4, nt=2, seed=2))
    assert rep.div_u_relative <= 1e-8


def test_quadratic_error_identity(step):
    s0, b, s1, bd = step
    x, t = _pts(b.coeffs.kappa + 1.0, 0.4)
    z = (b.u_c + b.u_t + b.v)(x, t)
    assert np.abs(bd.R_lin3(x, t) - np.einsum("in,jn->ijn", z, z)).max() <= 1e-12 * (np.abs(z).max() ** 2)
    up = b.u_p(x, t)
    lin2 = np.einsum("in,jn->ijn", z, up)
    assert np.abs(bd.R_lin2(x, t) - lin2 - lin2.transpose(1, 0, 2)).max() <= 1e-12 * np.abs(lin2).max()
    assert bd.R_lin1.is_zero()


def test_error_pieces_symmetric_and_local(step):
    s0, b, s1, bd = step
    K = b.coeffs.kappa + 1.0
    x, t = _pts(K, 0.6, 150)
    for name in ("R_quad", "R_Y", "R_time"):
        v = bd.R_pieces()[name](x, t)
        assert np.abs(v - v.transpose(1, 0, 2)).max() <= 1e-12 * max(np.abs(v).max(), 1e-300), name
    ang = RNG.uniform(0, 2 * np.pi, 60)
    rad = np.sqrt(2) * K + RNG.uniform(0.01, 3.0, 60)
    far = np.stack([rad * np.cos(ang), rad * np.sin(ang)])
    tf = RNG.uniform(0, 1, 60)
    for name in ("R_quad", "R_Y", "R_time", "R_lin2", "R_kappa"):
        assert np.all(bd.R_pieces()[name](far, tf) == 0.0), name
    for name, f in bd.r_pieces().items():
        assert np.all(f(far, tf) == 0.0), name


def test_time_tensor_divergence(step):
    s0, b, s1, bd = step
    x, t = _pts(b.coeffs.kappa + 1.0, 0.3)
    for bf in b.blocks[:2]:
        for name in ("Wp", "Wc", "Wcc_par", "Wcc_perp"):
            lhs = div(time_tensor(bf, name))(x, t)
            rhs = getattr(bf, name).diff(T)(x, t)
            assert np.abs(lhs - rhs).max() <= 1e-9 * np.abs(rhs).max(), name


def test_norm_report_bounds_and_files(step, tmp_path):
    s0, b, s1, bd = step
    rows = norm_report(bd, s1, P, t_grid=(0.5,), n=256)
    names = [r.name for r in rows]
    assert names == ["R_lin1", "R_lin2", "R_lin3", "R_kappa", "R_quad", "R_Y", "R_time",
                     "r_quad", "r_Y", "r_time", "r1"]
    by = {r.name: r for r in rows}
    assert by["R_kappa"].ok and by["R_kappa"].bound == pytest.approx(P.eta / 2)
    assert by["r1"].ok
    assert by["R_lin1"].value == 0.0
    pc, pj = write_norm_report(rows, tmp_path)
    data = json.loads(pj.read_text())
    assert [d["name"] for d in data] == names
    assert pc.read_text().splitlines()[0].startswith("name,norm,anchor,order")
