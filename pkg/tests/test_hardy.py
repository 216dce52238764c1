from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hardyci.hardy import (AtomPiece, HardyError, calibrate, canonical_atom, hp_atom_bound,
                           hp_maximal_estimate, scaling_field, weak_l1_demo, weak_l1_norm)

P = 0.75


def test_canonical_atom_zero_mean_and_sup():
    g = np.linspace(-1, 1, 2001)
    X, Y = np.meshgrid(g, g, indexing="ij")
    v = canonical_atom(np.stack([X, Y]))
    h = g[1] - g[0]
    assert abs(v.sum() * h * h) <= 1e-5
    assert v.max() == pytest.approx(1.0)
    # closed form: int (1-4s)(1-s)^2 over the unit disc = pi int_0^1 (1-4s)(1-s)^2 ds = 0
    from scipy.integrate import quad
    assert abs(quad(lambda s: (1 - 4 * s) * (1 - s) ** 2, 0, 1)[0]) <= 1e-14


def test_single_atom_bound_equals_calibration():
    C = calibrate(P)
    est = hp_maximal_estimate(canonical_atom, P, 8.0, 256)
    piece = AtomPiece(np.zeros(2), 1.0, None, 1.0, 0.0)
    assert hp_atom_bound([piece], P) == pytest.approx(C ** P * np.pi)
    assert hp_atom_bound([piece], P) == pytest.approx(est, rel=1e-12)


def test_maximal_estimate_homogeneity():
    base = hp_maximal_estimate(canonical_atom, P, 8.0, 128)
    assert hp_maximal_estimate(lambda x: 2 * canonical_atom(x), P, 8.0, 128) == pytest.approx(2 ** P * base,
                                                                                           rel=1e-12)
    r, h = 2.0, 3.0
    dil = hp_maximal_estimate(lambda x: canonical_atom(x, radius=r, height=h), P, 8.0 * r, 128)
    assert dil == pytest.approx(h ** P * r ** 2 * base, rel=1e-10)
    assert hp_maximal_estimate(lambda x: np.zeros(x.shape[1]), P, 8.0, 64) == 0.0


def test_invalid_inputs():
    for p in (2 / 3, 0.5, 1.0, 1.5):
        with pytest.raises(HardyError):
            calibrate(p)
    bad = AtomPiece(np.zeros(2), 1.0, None, 1.0, 0.5, "bump")
    with pytest.raises(HardyError, match="nonzero mean"):
        hp_atom_bound([bad], P)
    with pytest.raises(HardyError):
        scaling_field(2, 4.0)


@settings(max_examples=15, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.3, 1.5), st.floats(-2, 2), st.floats(0.5, 0.95))
def test_maximal_estimate_p_subadditive(cx, cy, r, hgt, p):
    p = max(p, 0.67)
    f = lambda x: canonical_atom(x, (cx, cy), r, hgt)
    g = lambda x: canonical_atom(x, (-1.0, 0.5), 0.7, 1.0)
    both = hp_maximal_estimate(lambda x: f(x) + g(x), p, 6.0, 64)
    parts = hp_maximal_estimate(f, p, 6.0, 64) + hp_maximal_estimate(g, p, 6.0, 64)
    assert both <= parts * (1 + 1e-12)


def test_scaling_field_derivative():
    mu = 4.0
    f0, f1 = scaling_field(0, mu), scaling_field(1, mu)
    x = np.random.default_rng(0).uniform(-0.3, 0.3, (2, 200))
    h = 1e-6
    fd = (f0(x + [[h], [0]]) - f0(x - [[h], [0]])) / (2 * h)
    assert np.abs(fd - f1(x)).max() <= 1e-6 * np.abs(f1(x)).max()


def test_weak_l1_step_functions():
    assert weak_l1_norm([1, 2], [1, 1]) == 2
    assert weak_l1_norm([3], [Fraction(1, 3)]) == 1
    assert weak_l1_norm([-4, 1], [Fraction(1, 2), 4]) == Fraction(9, 2)


def test_weak_l1_demo_exact_values():
    for n in range(1, 11):
        d = weak_l1_demo(n)
        assert d.integral == 1
        assert d.weak_norm == (2 - Fraction(1, 2 ** (n - 1))) / n
    errs = [weak_l1_demo(n).pairing_error for n in (2, 4, 8)]
    assert errs[0] > errs[1] > errs[2]
    with pytest.raises(ValueError):
        weak_l1_demo(0)
