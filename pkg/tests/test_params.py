from fractions import Fraction

import pytest

from hardyci import ParamSet, ParameterError, delta_n, eta_n


def test_from_exponents_relations():
    P = ParamSet.from_exponents(8, 4.125, 5.125, 16)
    assert P.mu2 == pytest.approx(8 * P.mu1)
    assert P.mu1 == pytest.approx(8 ** 4.125)
    assert P.omega == pytest.approx(8 ** 5.125)


def test_desk_and_with_keep_mu_relation():
    P = ParamSet.desk(8, 64.0)
    assert P.mu2 == 512.0 and P.omega == 64.0
    Q = P.with_(lam=16)
    assert Q.mu1 == 64.0 and Q.mu2 == 1024.0


@pytest.mark.parametrize("kw", [dict(p=0.6), dict(p=1.0), dict(eta=1 / 32), dict(eta=0.0)])
def test_rejects_invalid(kw):
    with pytest.raises(ParameterError):
        ParamSet.desk(8, 64.0, **kw)


def test_mu_order_enforced():
    with pytest.raises(ParameterError):
        ParamSet(lam=8, mu1=64.0, mu2=32.0)
    with pytest.raises(ParameterError):
        ParamSet(lam=8, mu1=64.0, mu2=600.0)


def test_schedule_is_exact():
    assert delta_n(3) == Fraction(1, 8)
    assert eta_n(0) == Fraction(1, 2 * 11584)
    for n in range(6):
        assert 362 * eta_n(n) == delta_n(n + 1) / 32
