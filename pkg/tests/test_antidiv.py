import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hardyci.antidiv import AntidivError, div_inv_torus, mat_antidiv, s_n, s_tilde_n, separable_div_inv
from hardyci.blocks import make_blocks
from hardyci.error import _second_primitive
from hardyci.fields import (DIRECTIONS, ComposeField, Coordinate, Frame, ModulatedField, Term, const, div,
                            grad, ls_norm, stack, zero)
from hardyci.params import ParamSet
from hardyci.perturbation import cutoff
from hardyci.profiles import make_base_profiles, periodize

Phi, phi, chain = make_base_profiles()
D3 = DIRECTIONS[3]
P1, P2 = periodize(phi, 4.0, D3.shift), periodize(phi, 16.0)
LAMS = [8, 16, 32, 64]
RNG = np.random.default_rng(0)
X = RNG.uniform(-2, 2, (2, 4000))


def u_lam(lam, M=None):
    M = D3.xi.astype(float) if M is None else M
    return ModulatedField([Term(None, P1, P2, Frame(D3, lam, 0.0), M)], M.shape)


def bump():
    return cutoff(1) * ComposeField(0.7 * Coordinate(0) + 0.2 * Coordinate(1), "exp")


def support_points(lam, n=20000, seed=1):
    """Points whose phases fall inside the supports of P1 and P2, spread over [-2, 2]^2."""
    rng = np.random.default_rng(seed)
    fr = Frame(D3, lam, 0.0)
    c = fr.phases(rng.uniform(-2, 2, (2, n)), 0.0)
    y1 = np.floor(c[0]) + P1.center + rng.uniform(-0.5, 0.5, n) / P1.mu
    y2 = np.floor(c[1]) + P2.center + rng.uniform(-0.5, 0.5, n) / P2.mu
    return fr.to_x(y1, y2)


def slope(vals):
    return np.polyfit(np.log(LAMS), np.log(vals), 1)[0]


def test_torus_inverse_closed_form():
    u = stack([ComposeField(2 * np.pi * Coordinate(0), "sin"), zero()])
    u.periodic = True
    R = div_inv_torus(u, 32)
    y = RNG.uniform(0, 1, (2, 500))
    Rv = R(y, 0.0)
    c = np.cos(2 * np.pi * y[0]) / (2 * np.pi)
    assert np.abs(Rv[0, 0] + c).max() <= 1e-10
    assert np.abs(Rv[0, 1]).max() <= 1e-10 and np.abs(Rv[1, 0]).max() <= 1e-10
    # trace-free construction: R22 = -R11
    assert np.abs(Rv[1, 1] - c).max() <= 1e-10
    assert np.abs(div(R)(y, 0.0) - u(y, 0.0)).max() <= 1e-10


def test_torus_inverse_zero_and_mean():
    z = stack([zero(), zero()])
    z.periodic = True
    assert np.abs(div_inv_torus(z, 16)(X, 0.0)).max() == 0.0
    m = stack([const(1.0), zero()])
    with pytest.raises(AntidivError):
        div_inv_torus(m, 16)


def test_torus_inverse_is_symmetric_trace_free_mean_zero():
    two_pi = 2 * np.pi
    u = stack([ComposeField(two_pi * Coordinate(1), "cos") * ComposeField(two_pi * Coordinate(0), "sin"),
               ComposeField(two_pi * (Coordinate(0) - Coordinate(1)), "cos")])
    u.periodic = True
    R = div_inv_torus(u, 32)
    y = RNG.uniform(0, 1, (2, 500))
    Rv = R(y, 0.0)
    assert np.abs(Rv[0, 1] - Rv[1, 0]).max() <= 1e-14
    assert np.abs(Rv[0, 0] + Rv[1, 1]).max() <= 1e-14
    assert np.abs(R.coeffs[..., 0, 0]).max() <= 1e-12


def test_separable_inverse_gains_one_over_lam():
    vals = [ls_norm(separable_div_inv(u_lam(l)), 1.0, "periodic") for l in LAMS]
    assert slope(vals) == pytest.approx(-1.0, abs=0.05)
    for l in (8, 32):
        R = separable_div_inv(u_lam(l))
        assert np.abs(div(R)(X, 0.0) - u_lam(l)(X, 0.0)).max() <= 1e-9 * np.abs(u_lam(l)(X, 0.0)).max()


def test_recursive_operator_n1_formula():
    f, u = bump(), u_lam(8)
    res = s_n(f, u, 1)
    Du = separable_div_inv(u)
    r_expect = -(Du.dot_const(np.eye(2)[0]).times(f.diff(0)) + Du.dot_const(np.eye(2)[1]).times(f.diff(1)))
    assert np.abs(res.r(X, 0.0) - r_expect(X, 0.0)).max() <= 1e-14 * max(np.abs(r_expect(X, 0.0)).max(), 1)
    assert np.abs(res.R(X, 0.0) - Du.times(f)(X, 0.0)).max() == 0.0
    lhs = (res.r + div(res.R))(X, 0.0)
    rhs = u.times(f)(X, 0.0)
    assert np.abs(lhs - rhs).max() <= 1e-8 * np.abs(rhs).max()


def test_recursive_operator_vanishes_where_f_is_flat():
    # inside B_1 the cutoff is identically 1, so grad f = 0 and r = 0 there
    res = s_n(cutoff(1), u_lam(8), 2)
    y = X[:, np.linalg.norm(X, axis=0) < 0.9]
    assert np.abs(res.r(y, 0.0)).max() == 0.0
    far = X[:, np.linalg.norm(X, axis=0) > 2.0 + 1e-9]
    if far.size:
        assert np.abs(res.R(far, 0.0)).max() == 0.0


def test_recursive_operator_rates():
    f = bump()
    r3 = [np.abs(s_n(f, u_lam(l), 3).r(support_points(l), 0.0)).max() for l in LAMS]
    assert slope(r3) == pytest.approx(-3.0, abs=0.1)
    T = lambda l: u_lam(l, np.outer(D3.hat, D3.hat))
    r2 = [np.abs(s_tilde_n(grad(f), T(l), 2).r(support_points(l), 0.0)).max() for l in LAMS]
    assert slope(r2) == pytest.approx(-2.0, abs=0.1)


@pytest.mark.parametrize("N", [1, 2, 3])
def test_tilde_operator_identity_on_block_quadratic(N):
    P = ParamSet.desk(8, 64.0)
    bf = make_blocks(4, P)
    f = bump()
    g = grad(f)
    T = bf.quad_pattern()
    res = s_tilde_n(g, T, N)
    t = RNG.uniform(0, 1, X.shape[1])
    rhs = (T.dot_const(np.eye(2)[0]).times(g[0]) + T.dot_const(np.eye(2)[1]).times(g[1]))(X, t)
    lhs = (res.r + div(res.R))(X, t)
    assert np.abs(lhs - rhs).max() <= 1e-8 * max(np.abs(rhs).max(), 1.0)


def test_tilde_operator_single_row_reduces():
    f = bump()
    e0 = np.array([[1.0, 0.0], [0.0, 0.0]])
    T = u_lam(8, e0)
    gvec = grad(f)
    a = s_tilde_n(gvec, T, 2)
    b = s_n(gvec[0], T.dot_const(np.eye(2)[0]), 2)
    assert np.array_equal(a.r(X, 0.0), b.r(X, 0.0))
    assert np.array_equal(a.R(X, 0.0), b.R(X, 0.0))


def test_tensor_antidivergences():
    Psi = _second_primitive(P2, 16.0, "phi2")
    for kind, vec in (("A", D3.xi), ("B", D3.xi_perp)):
        for l in (8, 32):
            M = mat_antidiv(kind, P1, P2, Psi, D3, l, 3.0)
            t = RNG.uniform(0, 1, X.shape[1])
            y1, y2 = Frame(D3, l, 3.0).phases(X, t)
            rhs = np.outer(vec, P1(y1) * P2(y2))
            assert np.abs(div(M)(X, t) - rhs).max() <= 1e-7 * np.abs(rhs).max()
            v = M(X, t)
            assert np.abs(v - np.swapaxes(v, 0, 1)).max() <= 1e-14 * np.abs(v).max()
    vals = [ls_norm(mat_antidiv("A", P1, P2, Psi, D3, l), 1.0, "periodic") for l in LAMS]
    assert slope(vals) == pytest.approx(-1.0, abs=0.05)
    Z = mat_antidiv("A", P1 * 0.0, P2, Psi, D3, 8)
    assert np.abs(Z(X, 0.0)).max() == 0.0


def test_tensor_antidivergence_chain_error():
    Psi = _second_primitive(P2, 16.0, "phi2") * 1.01
    with pytest.raises(AntidivError, match="chain"):
        mat_antidiv("A", P1, P2, Psi, D3, 8)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.3, 3.0), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.integers(1, 3),
       st.sampled_from([1, 2, 3, 4]))
def test_identity_for_random_smooth_coefficients(a, c1, c2, N, k):
    x1, x2 = Coordinate(0) - c1, Coordinate(1) - c2
    f = cutoff(1) * ComposeField(-a * (x1 * x1 + x2 * x2), "exp")
    d = DIRECTIONS[k]
    u = ModulatedField([Term(None, periodize(phi, 4.0, d.shift), P2, Frame(d, 8, 0.0), d.hat)], (2,))
    res = s_n(f, u, N)
    lhs = (res.r + div(res.R))(X[:, :500], 0.0)
    rhs = u.times(f)(X[:, :500], 0.0)
    assert np.abs(lhs - rhs).max() <= 1e-7 * max(np.abs(rhs).max(), 1e-300)
