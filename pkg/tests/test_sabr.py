import itertools
import math

import numpy as np
import pytest

from volgibbs.sabr import (SabrDomainError, SabrParams, SwaptionSpec, bachelier_delta, bachelier_price,
                           bachelier_vega, forward_swap_value, hedge_position, sabr_delta,
                           sabr_normal_vol, sabr_price, swap_dv_dF, swaption_payoff)

SWEEP = list(itertools.product([0.003, 0.01, 0.03], [0.0, 0.5, 1.0], [0.1, 0.5, 1.5], [-0.6, 0.0, 0.6]))


def spec(F=0.01, K=0.01, R=0, t=0.0, T0=1.0, tenor=1.0, rate=0.01, N=1e5):
    return SwaptionSpec.quarterly(F, K, t, T0, tenor, N, R, rate)


def test_degenerate_atm_equals_alpha():
    p = SabrParams(0.0065, 0.0, 0.0, 0.0)
    assert sabr_normal_vol(p, 0.01, 0.01, 0.0, 1.0) == 0.0065


def test_flat_bachelier_world_has_flat_smile():
    p = SabrParams(0.0065, 0.0, 0.0, 0.0)
    ks = np.linspace(-0.02, 0.03, 11)
    assert np.allclose(sabr_normal_vol(p, 0.01, ks, 0.0, 1.0), 0.0065, rtol=1e-13)


def test_atm_limit_is_continuous():
    p = SabrParams(0.0086, 0.5, 1.0732, 0.6506)
    atm = sabr_normal_vol(p, 0.01, 0.01, 0.0, 1.0)
    errs = [abs(sabr_normal_vol(p, 0.01, 0.01 + s * 10.0 ** -k, 0.0, 1.0) - atm)
            for k in range(4, 9) for s in (-1, 1)]
    assert max(errs[-2:]) < 1e-6 * atm
    # error shrinks with the strike gap
    assert errs[-1] < errs[0] and errs[-2] < errs[1]


def test_domain_error_for_non_positive_shifted_rate():
    p = SabrParams(0.01, 0.5, 0.4, 0.0, shift_b=0.01)
    with pytest.raises(SabrDomainError):
        sabr_normal_vol(p, 0.01, -0.02, 0.0, 1.0)


def test_param_validation():
    with pytest.raises(ValueError):
        SabrParams(0.0, 0.5, 0.3, 0.0)
    with pytest.raises(ValueError):
        SabrParams(0.01, 0.5, 0.3, 1.0)
    with pytest.raises(ValueError):
        SabrParams(0.01, 1.5, 0.3, 0.0)
    with pytest.raises(ValueError):
        sabr_normal_vol(SabrParams(0.01, 0.5, 0.3, 0.0), 0.01, 0.01, 1.0, 1.0)


def test_bachelier_atm_value_and_regression_constant():
    s = spec()
    pvbp = sum(0.25 * math.exp(-0.01 * (1.0 + 0.25 * i)) for i in range(1, 5))
    expected = 1e5 * pvbp * 0.006 / math.sqrt(2 * math.pi)
    assert bachelier_price(s, 0.006) == pytest.approx(expected, rel=1e-14)
    assert bachelier_price(s, 0.006) == pytest.approx(235.50803417280463, rel=1e-13)


def test_bachelier_vega_atm_and_fd():
    s = spec()
    assert bachelier_vega(s, 0.006) == pytest.approx(1e5 * s.pvbp / math.sqrt(2 * math.pi), rel=1e-14)
    for K in (0.0, 0.008, 0.01, 0.013):
        s = spec(K=K)
        h = 1e-7
        fd = (bachelier_price(s, 0.006 + h) - bachelier_price(s, 0.006 - h)) / (2 * h)
        assert bachelier_vega(s, 0.006) > 0
        assert bachelier_vega(s, 0.006) == pytest.approx(fd, rel=1e-6)


def test_forward_swap_value_examples():
    assert forward_swap_value(spec()) == 0.0
    assert forward_swap_value(spec(F=0.02, R=0)) == -forward_swap_value(spec(F=0.02, R=1))
    unit = SwaptionSpec(0.02, 0.01, 0.0, 1.0, (2.0,), (1.0,))
    assert forward_swap_value(unit) == pytest.approx(0.01, rel=1e-15)


def test_bachelier_limit_delta_and_hedge_ratio():
    p = SabrParams(0.006, 0.0, 0.0, 0.0)
    for R in (0, 1):
        for K in (0.008, 0.01, 0.012):
            s = spec(K=K, R=R)
            assert sabr_delta(p, s) == pytest.approx(bachelier_delta(s, 0.006), rel=1e-13)
    assert hedge_position(p, spec(R=0)) == pytest.approx(0.5, rel=1e-14)
    assert hedge_position(p, spec(R=1)) == pytest.approx(0.5, rel=1e-14)  # (Phi-1)/(-1)
    assert sabr_delta(p, spec(R=1)) == pytest.approx(-sabr_delta(p, spec(R=0)), rel=1e-14)


def test_deep_itm_payer_delta():
    p = SabrParams(0.006, 0.0, 0.0, 0.0)
    s = spec(F=0.06, K=0.0)
    assert sabr_delta(p, s) == pytest.approx(1e5 * s.pvbp, rel=1e-12)


def test_hedge_position_residual():
    p = SabrParams(0.0086, 0.5, 1.0732, 0.6506)
    for R in (0, 1):
        s = spec(K=0.012, R=R)
        m = hedge_position(p, s)
        assert abs(m * swap_dv_dF(s) - sabr_delta(p, s)) <= 1e-12 * abs(sabr_delta(p, s))


def test_payoff():
    s = spec(K=0.01)
    assert swaption_payoff(s, 0.009) == 0.0
    assert swaption_payoff(s, 0.011) == pytest.approx(1e5 * s.replace(t=1.0).pvbp * 0.001)
    assert swaption_payoff(spec(R=1), 0.009) == pytest.approx(1e5 * s.replace(t=1.0).pvbp * 0.001)


def test_vectorised_forward():
    p = SabrParams(0.0086, 0.5, 1.0732, 0.6506)
    F = np.array([0.008, 0.01, 0.012])
    s = spec(F=F, K=0.01)
    d = sabr_delta(p, s)
    for i, f in enumerate(F):
        assert d[i] == pytest.approx(sabr_delta(p, spec(F=float(f), K=0.01)), rel=1e-14)


@pytest.mark.parametrize("alpha,beta,nu,rho", SWEEP)
def test_sweep_properties(alpha, beta, nu, rho):
    F, T0 = 0.01, 1.0
    p = SabrParams(alpha, beta, nu, rho)
    atm = sabr_normal_vol(p, F, F, 0.0, T0)
    for s in (-1, 1):
        assert abs(sabr_normal_vol(p, F, F * (1 + s * 1e-8), 0.0, T0) - atm) < 1e-6 * atm
    # monotone in alpha
    p2 = SabrParams(alpha * 1.01, beta, nu, rho)
    assert sabr_normal_vol(p2, F, 0.012, 0.0, T0) > sabr_normal_vol(p, F, 0.012, 0.0, T0)
    for c in (-1.0, 0.0, 1.0):
        K = F + c * atm
        pay, rec = spec(F=F, K=K, R=0), spec(F=F, K=K, R=1)
        diff = sabr_price(p, pay) - sabr_price(p, rec)
        assert diff == pytest.approx(forward_swap_value(pay), rel=1e-10, abs=1e-10 * pay.notional * pay.pvbp * atm)
        h = 1e-6
        up = sabr_price(p, pay.replace(forward=F + h))
        dn = sabr_price(p, pay.replace(forward=F - h))
        assert sabr_delta(p, pay) == pytest.approx((up - dn) / (2 * h), rel=1e-4)


def test_far_strike_tiny_alpha_is_accurate():
    # zeta ~ -2400: the direct log form of x(zeta) loses ~7 digits here.
    # Reference is a 50-digit evaluation of the same expansion.
    p = SabrParams(1e-4, 0.5, 1.0, 0.0)
    assert sabr_normal_vol(p, 0.0, 0.0625, 0.0, 1.0) == pytest.approx(0.0079866656502709031, rel=1e-14)
