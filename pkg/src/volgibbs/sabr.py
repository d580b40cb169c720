"""Shifted-SABR normal volatility, Bachelier pricing and SABR delta hedging.

Vols and rates are decimals here (0.0060 is 60 bp). Functions accept numpy
arrays for the forward where that is natural, so the hedging engine can
price many paths at once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from . import kernels

ATM_EPS = 1e-8
DEFAULT_SHIFT = 0.04
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class SabrDomainError(ArithmeticError):
    """Expansion undefined: non-positive shifted rate or degenerate x-hat."""


@dataclass(frozen=True)
class SabrParams:
    alpha: float
    beta: float
    nu: float
    rho: float
    shift_b: float = DEFAULT_SHIFT

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if not self.nu >= 0:
            raise ValueError(f"nu must be >= 0, got {self.nu}")
        if not abs(self.rho) < 1.0:
            raise ValueError(f"rho must lie in (-1, 1), got {self.rho}")
        if not self.shift_b >= 0:
            raise ValueError(f"shift must be >= 0, got {self.shift_b}")


@dataclass(frozen=True)
class DiscountCurve:
    """Flat continuously compounded curve, P(t, T) = exp(-r (T - t))."""

    rate: float = 0.0

    def discount(self, t, T):
        return np.exp(-self.rate * (np.asarray(T, dtype=float) - t))


@dataclass(frozen=True)
class SwaptionSpec:
    forward: float
    strike: float
    t: float
    T0: float
    payment_dates: tuple
    daycount_fractions: tuple
    notional: float = 1.0
    payer_receiver: int = 0
    discount: DiscountCurve = field(default_factory=DiscountCurve)

    def __post_init__(self):
        pay = tuple(float(x) for x in self.payment_dates)
        dcf = tuple(float(x) for x in self.daycount_fractions)
        object.__setattr__(self, "payment_dates", pay)
        object.__setattr__(self, "daycount_fractions", dcf)
        if self.payer_receiver not in (0, 1):
            raise ValueError("payer_receiver must be 0 (payer) or 1 (receiver)")
        if len(pay) == 0 or len(pay) != len(dcf):
            raise ValueError("need one day-count fraction per payment date")
        if not pay[0] >= self.T0 or np.any(np.diff(pay) <= 0):
            raise ValueError("payment dates must be increasing and not before T0")
        if min(dcf) <= 0:
            raise ValueError("day-count fractions must be positive")

    @classmethod
    def quarterly(cls, forward, strike, t, T0, tenor, notional=1.0, payer_receiver=0, rate=0.0):
        n = int(round(tenor * 4))
        dates = tuple(T0 + 0.25 * (i + 1) for i in range(n))
        return cls(forward, strike, t, T0, dates, (0.25,) * n, notional, payer_receiver,
                   DiscountCurve(rate))

    def replace(self, **kw) -> "SwaptionSpec":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return SwaptionSpec(**d)

    @property
    def pvbp(self):
        """Annuity sum_i delta_i P(t, T_i); vectorised over ``t`` if it is an array."""
        t = np.asarray(self.t, dtype=float)[..., None]
        P = self.discount.discount(t, np.asarray(self.payment_dates))
        out = (P * np.asarray(self.daycount_fractions)).sum(axis=-1)
        return out if out.ndim else float(out)

    @property
    def expiry(self):
        return np.asarray(self.T0, dtype=float) - self.t


def normal_vol_array(alpha, beta, nu, rho, shift, forward, strike, tau, deriv=False):
    """Vectorised shifted-SABR normal vol over broadcast inputs.

    Returns ``sigma`` or ``(sigma, dsigma_dF)``. ``tau`` is time to expiry.
    Raises SabrDomainError if any point is outside the expansion's domain.
    """
    arrs = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in
                                 (alpha, beta, nu, rho, shift, forward, strike, tau)))
    shape = arrs[0].shape
    flat = [np.ascontiguousarray(a.reshape(-1)) for a in arrs]
    sigma, dsig, status = kernels.normal_vol(*flat, ATM_EPS, bool(deriv))
    if np.any(status):
        bad = int(np.flatnonzero(status)[0])
        kind = ("non-positive shifted forward or strike" if status[bad] == kernels.BAD_SHIFTED_RATE
                else "1 - 2 rho zeta + zeta^2 <= 0 or x-hat = 0")
        raise SabrDomainError(f"{kind} at F={flat[5][bad]!r}, K={flat[6][bad]!r}")
    sigma = sigma.reshape(shape)
    if deriv:
        return sigma, dsig.reshape(shape)
    return sigma


def _tau(t, T0):
    tau = np.asarray(T0, dtype=float) - np.asarray(t, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("valuation time must precede expiry (t < T0)")
    return tau


def sabr_normal_vol(params: SabrParams, forward, strike, t, T0):
    """Implied normal vol of the shifted SABR model.

    Uses the ATM expansion when ``|F - K| <= ATM_EPS`` and the general
    expansion otherwise.
    """
    tau = _tau(t, T0)
    out = normal_vol_array(params.alpha, params.beta, params.nu, params.rho, params.shift_b,
                           forward, strike, tau)
    return out if np.ndim(out) else float(out)


def normal_vol_and_slope(params: SabrParams, forward, strike, t, T0):
    """(sigma_N, d sigma_N / dF) with the strike held fixed."""
    tau = _tau(t, T0)
    return normal_vol_array(params.alpha, params.beta, params.nu, params.rho, params.shift_b,
                            forward, strike, tau, deriv=True)


def norm_cdf(x):
    return ndtr(x)


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _bachelier_parts(spec: SwaptionSpec, sigma_N):
    sigma_N = np.asarray(sigma_N, dtype=float)
    if np.any(sigma_N <= 0):
        raise ValueError("normal vol must be positive")
    tau = _tau(spec.t, spec.T0)
    sd = sigma_N * np.sqrt(tau)
    d = (np.asarray(spec.forward, dtype=float) - spec.strike) / sd
    scale = spec.notional * spec.pvbp
    return d, sd, scale


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def bachelier_price(spec: SwaptionSpec, sigma_N):
    d, sd, scale = _bachelier_parts(spec, sigma_N)
    R = spec.payer_receiver
    return _scalar(scale * sd * (d * (norm_cdf(d) - R) + norm_pdf(d)))


def bachelier_delta(spec: SwaptionSpec, sigma_N):
    """dV/dF at fixed normal vol."""
    d, _, scale = _bachelier_parts(spec, sigma_N)
    return _scalar(scale * (norm_cdf(d) - spec.payer_receiver))


def bachelier_vega(spec: SwaptionSpec, sigma_N):
    d, sd, scale = _bachelier_parts(spec, sigma_N)
    tau = np.asarray(spec.T0, dtype=float) - spec.t
    return _scalar(scale * np.sqrt(tau) * norm_pdf(d))


def sabr_price(params: SabrParams, spec: SwaptionSpec):
    return bachelier_price(spec, sabr_normal_vol(params, spec.forward, spec.strike, spec.t, spec.T0))


def swaption_payoff(spec: SwaptionSpec, forward=None):
    """Exercise value at T0: N * PVBP(T0) * max(+-(F - K), 0)."""
    F = np.asarray(spec.forward if forward is None else forward, dtype=float)
    sign = 1.0 - 2.0 * spec.payer_receiver
    at_expiry = spec.replace(t=spec.T0)
    return _scalar(spec.notional * at_expiry.pvbp * np.maximum(sign * (F - spec.strike), 0.0))


def sabr_delta(params: SabrParams, spec: SwaptionSpec):
    """SABR delta: Bachelier delta plus the smile term through d sigma_N / dF."""
    sigma, dsig = normal_vol_and_slope(params, spec.forward, spec.strike, spec.t, spec.T0)
    d, _, scale = _bachelier_parts(spec, sigma)
    tau = np.asarray(spec.T0, dtype=float) - spec.t
    return _scalar(scale * (norm_cdf(d) + np.sqrt(tau) * norm_pdf(d) * dsig - spec.payer_receiver))


def forward_swap_value(spec: SwaptionSpec):
    sign = 1.0 - 2.0 * spec.payer_receiver
    return _scalar(sign * spec.notional * spec.pvbp * (np.asarray(spec.forward, dtype=float) - spec.strike))


def swap_dv_dF(spec: SwaptionSpec):
    return _scalar((1.0 - 2.0 * spec.payer_receiver) * spec.notional * np.asarray(spec.pvbp))


def hedge_position(params: SabrParams, spec: SwaptionSpec):
    """Forward-swap units m_t making m_t dV_swap/dF - delta vanish."""
    return _scalar(np.asarray(sabr_delta(params, spec)) / swap_dv_dF(spec))
