import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hardyci.fields import DIRECTIONS
from hardyci.profiles import (Concentrated, ProfileError, gauss, lr_norm_1d, make_base_profiles,
                              periodize)

Phi, phi, chain = make_base_profiles()


def test_master_profile_is_odd_with_zero_integral():
    x = np.linspace(-0.49, 0.49, 201)
    assert Phi(np.array([0.0]))[0] == 0.0
    assert np.allclose(Phi(-x), -Phi(x), atol=1e-15)
    g, w = gauss(200)
    assert abs(np.sum(w * Phi(g - 0.5))) < 1e-14


def test_phi_is_third_derivative_with_unit_l2():
    assert lr_norm_1d(phi, 2.0) == pytest.approx(1.0, abs=1e-10)
    g, w = gauss(200)
    assert abs(np.sum(w * phi(g - 0.5))) < 1e-12
    x = np.linspace(-0.45, 0.45, 101)
    assert np.allclose(Phi.derivs(x, 3)[3], phi(x), rtol=0, atol=1e-12)


def test_second_primitives_close_the_chain():
    x = np.linspace(-0.45, 0.45, 101)
    # chain[0]'' = phi and chain[1]'' = Phi''
    assert np.allclose(chain[0].derivs(x, 2)[2], phi(x), atol=1e-12)
    assert np.allclose(chain[1].derivs(x, 2)[2], Phi.derivative(2)(x), atol=1e-12)
    g, w = gauss(200)
    for p in chain:
        assert abs(np.sum(w * p(g - 0.5))) < 1e-13


def test_outside_support_is_exact_zero():
    x = np.array([-0.75, -0.5, 0.5, 0.6, 3.0])
    assert np.all(Phi(x) == 0.0) and np.all(phi(x) == 0.0)
    p = periodize(phi, 16.0)
    y = np.array([0.0, 0.1, 0.3, 0.7, 0.95, 2.2])
    assert np.all(p(y) == 0.0)


def test_invalid_constructions_rejected():
    with pytest.raises(ProfileError):
        make_base_profiles(5)
    with pytest.raises(ProfileError):
        periodize(phi, 1.0)
    with pytest.raises(ProfileError):
        Concentrated((0,), 0.5, 0.5)


@pytest.mark.parametrize("r", [1.0, 1.5, 2.0, 3.0, np.inf])
@pytest.mark.parametrize("mu", [4.0, 16.0, 64.0])
def test_concentration_scaling_law(r, mu):
    ratio = lr_norm_1d(periodize(phi, mu), r) / lr_norm_1d(phi, r)
    expo = 0.5 - (0.0 if np.isinf(r) else 1.0 / r)
    assert ratio == pytest.approx(mu ** expo, rel=1e-6)


def test_l1_at_mu_16():
    assert lr_norm_1d(periodize(phi, 16.0), 1.0) == pytest.approx(16 ** -0.5 * lr_norm_1d(phi, 1.0), rel=1e-8)


def test_zero_profile_norm():
    z = periodize(phi, 8.0) * 0.0
    assert lr_norm_1d(z, 2.0) == 0.0


def test_shifted_profiles_have_zero_mean():
    for k in (1, 2, 3, 4):
        p = periodize(phi, 16.0, DIRECTIONS[k].shift)
        assert abs(p.integral()) < 1e-12
        y = np.linspace(0, 1, 2001)
        c = p.center
        assert np.all(p(y)[np.abs(((y - c + 0.5) % 1.0) - 0.5) > 0.5 / 16] == 0.0)


def test_periodic_and_derivative_of_periodization():
    p = periodize(phi, 8.0, 0.1)
    y = np.linspace(0.0, 1.0, 97)
    assert np.allclose(p(y), p(y + 3.0), atol=1e-12)
    h = 1e-6
    fd = (p(y + h) - p(y - h)) / (2 * h)
    assert np.allclose(p.derivs(y, 1)[1], fd, atol=1e-5 * np.abs(fd).max())


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.49, 0.49), min_size=1, max_size=50), st.integers(0, 4))
def test_derivatives_match_central_differences(xs, level):
    x = np.array(xs)
    h = 1e-5
    d = Phi.derivs(x, level + 1)
    fd = (Phi.derivs(x + h, level)[level] - Phi.derivs(x - h, level)[level]) / (2 * h)
    scale = max(1.0, float(np.abs(Phi.derivs(np.linspace(-.5, .5, 2001), level + 1)[level + 1]).max()))
    assert np.max(np.abs(d[level + 1] - fd)) <= 1e-5 * scale
