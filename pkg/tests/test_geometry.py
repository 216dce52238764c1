import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hardyci.geometry import BALL_RADIUS, GeometryError, gamma_decompose, reconstruct, unit_dyads


def _random_ball(rng, n, radius=BALL_RADIUS):
    D = rng.normal(size=(n, 2, 2))
    D = 0.5 * (D + np.swapaxes(D, 1, 2))
    D /= np.linalg.norm(D, axis=(1, 2))[:, None, None]
    D *= (radius * rng.uniform(0, 1, n) ** 0.5 * 0.999)[:, None, None]
    return np.eye(2) + D


def test_identity_weights():
    g = gamma_decompose(np.eye(2))
    assert np.allclose(g.c, [0.75, 0.75, 0.25, 0.25], atol=0)
    assert np.abs(reconstruct(g.c) - np.eye(2)).max() == 0.0


def test_off_diagonal_perturbation():
    A = np.eye(2) + 0.1 * np.array([[0, 1], [1, 0]])
    g = gamma_decompose(A)
    assert g.c[2] - g.c[3] == pytest.approx(0.2, abs=1e-15)
    assert g.c[2] * g.c[3] > 0
    assert np.abs(reconstruct(g.c) - A).max() <= 1e-14


def test_random_ball_sweep():
    A = _random_ball(np.random.default_rng(1), 1000)
    g = gamma_decompose(A)
    assert np.abs(reconstruct(g.c) - A).max() <= 1e-12
    assert g.c.min() > 0
    assert np.abs(g.gamma).max() <= 1.0


def test_outside_ball_rejected():
    with pytest.raises(GeometryError):
        gamma_decompose(np.eye(2) * 1.2)
    with pytest.raises(GeometryError):
        gamma_decompose(np.array([[1.0, 0.01], [0.0, 1.0]]))


def test_lipschitz_constant_is_finite():
    rng = np.random.default_rng(2)
    A = _random_ball(rng, 100000)
    B = _random_ball(rng, 100000)
    ga, gb = gamma_decompose(A).gamma, gamma_decompose(B).gamma
    L = np.linalg.norm(ga - gb, axis=1) / np.linalg.norm(A - B, axis=(1, 2))
    # c_k >= 1/8 on the ball gives |d sqrt(c)| <= sqrt(2), times the affine map norm
    assert np.isfinite(L.max()) and L.max() < 4.0


def test_dyads_are_unit_rank_one():
    D = unit_dyads()
    assert np.allclose(np.trace(D, axis1=1, axis2=2), 1.0)
    assert np.allclose(np.linalg.det(D), 0.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 0.999))
def test_weights_inside_band(a, b, c, s):
    D = np.array([[a, b], [b, c]])
    n = np.linalg.norm(D)
    if n == 0:
        return
    A = np.eye(2) + D / n * s * BALL_RADIUS
    g = gamma_decompose(A)
    assert np.all(g.c > 0.125 - 1e-12) and np.all(g.c < 0.875 + 1e-12)
    assert np.abs(reconstruct(g.c) - A).max() <= 1e-14
