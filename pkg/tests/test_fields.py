import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hardyci.blocks import make_blocks
from hardyci.fields import (DIRECTIONS, ComposeField, Coordinate, FieldError, Support, calculus, const,
                            curl, div, dump_field, fast_oscillation_bound, fast_oscillation_pairing, grad,
                            improved_holder_gap, load_field, ls_norm, outer, perp_grad, stack, sym, zero)
from hardyci.jets import T
from hardyci.params import ParamSet
from hardyci.perturbation import cutoff

RNG = np.random.default_rng(0)
PTS = RNG.uniform(-1.5, 1.5, (2, 1000))


def gaussian_field(a, c1, c2, b):
    x1, x2 = Coordinate(0) - c1, Coordinate(1) - c2
    return ComposeField(-a * (x1 * x1 + x2 * x2), "exp") * (b[0] + b[1] * Coordinate(0) + b[2] * x2 * x2)


def test_curl_perp_grad_is_minus_laplacian_against_fd():
    f = gaussian_field(1.3, 0.2, -0.1, (1.0, 0.5, -0.7))
    lhs = curl(perp_grad(f))(PTS, 0.0)
    h = 1e-3
    e1, e2 = np.array([[h], [0]]), np.array([[0], [h]])
    lap = (f(PTS + e1, 0) + f(PTS - e1, 0) + f(PTS + e2, 0) + f(PTS - e2, 0) - 4 * f(PTS, 0)) / h ** 2
    assert np.abs(lhs + lap).max() <= 1e-5 * np.abs(lap).max()
    lap_exact = (f.diff(0).diff(0) + f.diff(1).diff(1))(PTS, 0.0)
    assert np.abs(lhs + lap_exact).max() <= 1e-12 * np.abs(lap_exact).max()


@settings(max_examples=20, deadline=None)
@given(st.floats(0.3, 3.0), st.floats(-1, 1), st.floats(-1, 1),
       st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_div_perp_grad_vanishes(a, c1, c2, b):
    f = gaussian_field(a, c1, c2, b)
    g = perp_grad(f)
    scale = max(np.abs(grad(f).diff(0)(PTS, 0.0)).max(), 1e-300)
    assert np.abs(div(g)(PTS, 0.0)).max() <= 1e-9 * max(scale, 1.0)


def test_time_derivative_of_principal_block():
    P = ParamSet.desk(8, 64.0)
    for k in (1, 3):
        bf = make_blocks(k, P)
        x = RNG.uniform(-1, 1, (2, 400))
        t = RNG.uniform(0, 1, 400)
        fr = bf.frame
        y1, y2 = fr.phases(x, t)
        pr = bf.profiles
        expect = -P.omega * P.lam * pr["phi1"].derivs(y1, 1)[1] * pr["phi2"](y2) * bf.direction.hat[:, None]
        got = bf.Wp.diff(T)(x, t)
        assert np.abs(got - expect).max() <= 1e-9 * np.abs(expect).max()
    # finite difference in t at a point on the support
    bf = make_blocks(2, P)
    x0 = bf.frame.to_x(np.array([pr["phi1"].center + 0.1 / P.mu1]), np.array([0.5 + 0.05 / P.mu2]), 0.3)
    h = 1e-6
    fd = (bf.Wp(x0, 0.3 + h) - bf.Wp(x0, 0.3 - h)) / (2 * h)
    assert np.allclose(bf.Wp.diff(T)(x0, 0.3), fd, rtol=1e-4)


def test_ls_norm_of_blocks():
    P = ParamSet.desk(8, 64.0)
    for k in (1, 2, 3, 4):
        bf = make_blocks(k, P)
        assert ls_norm(bf.w, 2.0, "periodic") == pytest.approx(1.0, abs=1e-10)
        for s in (1.0, 2.0):
            wk = ls_norm(bf.w, s, "periodic")
            assert ls_norm(bf.Wp, s, "periodic", t=0.37) == pytest.approx(wk, rel=1e-8)
    assert ls_norm(zero(), 2.0, Support.compact(1.0)) == 0.0


def test_ls_norm_homogeneous():
    f = cutoff(1) * ComposeField(0.5 * Coordinate(0), "exp")
    assert ls_norm(-3.0 * f, 2.0) == pytest.approx(3.0 * ls_norm(f, 2.0), rel=1e-10)


def test_tensor_fields_are_symmetric():
    P = ParamSet.desk(8, 64.0)
    bf = make_blocks(3, P)
    x = RNG.uniform(-1, 1, (2, 500))
    for R in (outer(bf.Wp, bf.Wp), sym(stack([bf.Wp.diff(0), bf.Wp.diff(1)], (2, 2))), bf.quad_pattern()):
        v = R(x, 0.2)
        assert np.abs(v - np.swapaxes(v, 0, 1)).max() <= 1e-12 * max(np.abs(v).max(), 1.0)


def test_direction_conventions():
    for d in DIRECTIONS.values():
        assert np.array_equal(d.xi_perp, [d.xi[1], -d.xi[0]])
        assert np.allclose(d.Lambda_inv @ d.Lambda, np.eye(2), atol=0)
        assert np.allclose(d.Lambda_inv, d.Lambda / d.norm_sq, atol=0)
    with pytest.raises(FieldError):
        calculus(zero(), "laplace")


def _bump():
    return cutoff(1) * ComposeField(0.7 * Coordinate(0) + 0.2 * Coordinate(1), "exp")


def _sin():
    g = ComposeField(2 * np.pi * Coordinate(0), "sin")
    g.periodic = True
    return g


def test_fast_oscillation_pairing_bound_and_decay():
    f, g = _bump(), _sin()
    vals = [fast_oscillation_pairing(f, g, lam) for lam in (8, 16)]
    for lam, v in zip((8, 16), vals):
        assert v <= fast_oscillation_bound(f, g, lam)
    # a smooth f decays at least as fast as the 1/lam bound
    assert np.log(vals[1] / vals[0]) / np.log(2.0) <= -1.0 + 0.1
    assert fast_oscillation_pairing(zero(), g, 8, K=1.0) == 0.0


def test_fast_oscillation_whole_periods_cancel():
    box = const(1.0)
    box.support = Support.compact(1.0)
    assert fast_oscillation_pairing(box, _sin(), 8) <= 1e-10
    bad = ComposeField(2 * np.pi * Coordinate(0), "sin") + 0.5
    bad.periodic = True
    with pytest.raises(FieldError):
        fast_oscillation_pairing(_bump(), bad, 8)


def test_improved_holder():
    f = _bump()
    one = const(1.0)
    one.periodic = True
    lhs, rhs = improved_holder_gap(f, one, 8, 2.0)
    assert lhs == pytest.approx(ls_norm(f, 2.0), rel=1e-6) and lhs <= rhs
    g = ComposeField(2 * np.pi * Coordinate(0), "sin") * ComposeField(2 * np.pi * Coordinate(1), "cos") + 1.5
    g.periodic = True
    base = ls_norm(f, 2.0) * ls_norm(g, 2.0, "periodic")
    gaps = []
    for lam in (8, 16):
        lhs, rhs = improved_holder_gap(f, g, lam, 2.0)
        assert lhs <= rhs
        gaps.append(abs(lhs - base))
    # smooth f: the gap decays at least at the lam^(-1/s) rate
    assert np.log(gaps[1] / gaps[0]) / np.log(2.0) <= -0.5 + 0.1
    lhs, rhs = improved_holder_gap(f, g, 8, np.inf)
    assert lhs <= rhs


def test_field_dump_roundtrip(tmp_path):
    f = stack([gaussian_field(1.0, 0, 0, (1, 0, 0)), Coordinate(0)])
    path = dump_field(f, tmp_path / "u.bin", (-1.0, 1.0), 17, t=0.0)
    data, header = load_field(path)
    assert header["resolution"] == 17 and data.shape == (17, 17, 2)
    x = np.linspace(-1, 1, 17)
    assert np.allclose(data[3, 5], f(np.array([[x[3]], [x[5]]]), 0.0)[:, 0], atol=0)
    raw = path.read_bytes()
    assert len(raw) == 17 * 17 * 2 * 8
