from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hardyci.params import ParameterError, delta_n, eta_n
from hardyci.scheduler import (N_ROWS, IterationLog, alpha_threshold, bookkeeping_identity, choose_parameters,
                               exponent_table, gamma0, measure_scaling)

EXPECTED = {                     # p = 3/4, alpha = 33/8, beta = 41/8, N = 16, by hand
    "u^c": -1.0, "u^t": -0.5, "energy increment": -37 / 24, "curl w": -0.25, "curl u^t": -0.75,
    "R^time": -0.5, "r^quad": -6.75, "r^Y": -11.875, "r^time": -7.25, "int curl r^quad": -0.625,
    "int curl r^Y": -5.75, "int curl r^time": -1.125,
}


def test_choice_for_three_quarters():
    ch = choose_parameters(0.75)
    assert ch.threshold == pytest.approx(3.75)
    assert tuple(ch) == (pytest.approx(4.125), pytest.approx(5.125), 16)
    assert gamma0(*ch, 0.75) == pytest.approx(-0.25)


def test_table_values_and_two_routes():
    tab = exponent_table(4.125, 5.125, 16, 0.75)
    assert {r["name"] for r in tab} == set(EXPECTED)
    for r in tab:
        assert r["exponent"] == pytest.approx(EXPECTED[r["name"]]), r["name"]
        assert r["substituted"] == pytest.approx(r["exponent"]), r["name"]
        assert not r["flag"]
    orders = {r["name"]: r["order"] for r in tab}
    assert orders["u^c"] == "mu1 mu2^(-1)"
    assert orders["r^quad"] == "lam^(-N) mu1 mu2"


def test_gamma0_rejects_nonnegative_rows():
    with pytest.raises(ParameterError, match="curl w"):
        gamma0(1.0, 2.0, 16, 0.75)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.67, 0.99), st.floats(1.01, 2.0))
def test_choice_makes_every_row_negative(p, margin):
    ch = choose_parameters(p, margin)
    assert ch.alpha > alpha_threshold(p)
    tab = exponent_table(ch.alpha, ch.beta, ch.N, p)
    assert all(r["exponent"] < 0 for r in tab)
    assert max(r["exponent"] for r in tab if r["name"] in N_ROWS) <= -0.5
    worse = exponent_table(ch.alpha, ch.beta, ch.N - 1, p)
    assert ch.N == 1 or max(r["exponent"] for r in worse if r["name"] in N_ROWS) > -0.5
    for r in tab:
        assert r["substituted"] == pytest.approx(r["exponent"], abs=1e-9)


def test_bookkeeping_exact():
    for n in range(0, 25):
        assert bookkeeping_identity(n)
        assert isinstance(eta_n(n), Fraction)
        assert 362 * eta_n(n) == delta_n(n + 1) / 32
        assert eta_n(n - 1) == 2 * eta_n(n) if n >= 1 else True


def test_measure_scaling_on_known_power():
    out = measure_scaling(lambda l: 3.0 * l ** -0.7, [8, 16, 32, 64])
    assert out["slope"] == pytest.approx(-0.7, abs=1e-12)
    assert out["residual"] <= 1e-12
    with pytest.raises(ValueError):
        measure_scaling(lambda l: 1.0, [8, 16, 32])
    with pytest.raises(ValueError):
        measure_scaling(lambda l: 1.0, [8, 16, 24, 64])
    assert measure_scaling(lambda l: 0.0, [8, 16, 32, 64])["note"] == "degenerate values"


def test_iteration_log_json_roundtrip(tmp_path):
    import json
    log = IterationLog(0.75, 4.125, 5.125, 16, -0.25, "trend", 0,
                       bookkeeping={"0": True}, steps=[{"frac": Fraction(1, 3), "x": np.float64(2.0)}])
    data = json.loads(log.write(tmp_path / "log.json").read_text())
    assert data["steps"][0] == {"frac": "1/3", "x": 2.0} and data["gamma0"] == -0.25
