"""Constant-volatility closed forms used as references and sanity anchors.

When the multiplier interval degenerates (``sigma_min == sigma_max``) and the
factor is frozen (``delta == 0``), the worst-case price collapses to ordinary
Black-Scholes pricing at spot volatility ``q * exp(v)``.  These routines give
that benchmark in closed form for any piecewise-linear payoff.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import norm

from .model import PiecewiseLinearPayoff


def bs_call(x, strike: float, vol: float, tau: float, rate: float = 0.0):
    """Black-Scholes price of ``(X - strike)^+`` at time-to-maturity ``tau``.

    Degenerate inputs (``tau = 0`` or ``vol = 0``) return the discounted
    intrinsic value.  ``x`` may be a scalar or an array.
    """
    if tau < 0.0:
        raise ValueError(f"time to maturity must be non-negative, got {tau}")
    if vol < 0.0:
        raise ValueError(f"volatility must be non-negative, got {vol}")
    x_arr = np.asarray(x, dtype=float)
    disc = np.exp(-rate * tau)
    if tau == 0.0 or vol == 0.0:
        fwd = x_arr * np.exp(rate * tau)
        out = disc * np.maximum(fwd - strike, 0.0)
    else:
        srt = vol * np.sqrt(tau)
        with np.errstate(divide="ignore"):
            d1 = (np.log(x_arr / strike) + (rate + 0.5 * vol**2) * tau) / srt
        d2 = d1 - srt
        out = np.where(
            x_arr > 0.0,
            x_arr * norm.cdf(d1) - strike * disc * norm.cdf(d2),
            0.0,
        )
    if np.isscalar(x) or x_arr.ndim == 0:
        return float(out)
    return out


def bs_call_vega(x, strike: float, vol: float, tau: float, rate: float = 0.0):
    """Sensitivity of :func:`bs_call` to the volatility argument."""
    if tau < 0.0:
        raise ValueError(f"time to maturity must be non-negative, got {tau}")
    if vol <= 0.0 or tau == 0.0:
        out = np.zeros_like(np.asarray(x, dtype=float))
    else:
        x_arr = np.asarray(x, dtype=float)
        srt = vol * np.sqrt(tau)
        with np.errstate(divide="ignore"):
            d1 = (np.log(x_arr / strike) + (rate + 0.5 * vol**2) * tau) / srt
        out = np.where(x_arr > 0.0, x_arr * norm.pdf(d1) * np.sqrt(tau), 0.0)
    if np.isscalar(x) or np.asarray(x).ndim == 0:
        return float(out)
    return out


def fixed_vol_price(
    payoff: PiecewiseLinearPayoff, x, vol: float, tau: float, rate: float = 0.0
):
    """Price the payoff under geometric Brownian motion at volatility ``vol``.

    Splits the payoff into an affine part plus call legs:
    the affine part prices by discounting and martingality of the discounted
    spot, each leg by :func:`bs_call`.
    """
    const, base_slope, legs = payoff.as_calls()
    x_arr = np.asarray(x, dtype=float)
    out = const * np.exp(-rate * tau) + base_slope * x_arr
    for strike, weight in legs:
        out = out + weight * bs_call(x_arr, strike, vol, tau, rate)
    if np.isscalar(x) or x_arr.ndim == 0:
        return float(out)
    return out


def fixed_vol_vega(
    payoff: PiecewiseLinearPayoff, x, vol: float, tau: float, rate: float = 0.0
):
    """Derivative of :func:`fixed_vol_price` with respect to ``vol``."""
    _, _, legs = payoff.as_calls()
    x_arr = np.asarray(x, dtype=float)
    out = np.zeros_like(x_arr)
    for strike, weight in legs:
        out = out + weight * bs_call_vega(x_arr, strike, vol, tau, rate)
    if np.isscalar(x) or x_arr.ndim == 0:
        return float(out)
    return out
