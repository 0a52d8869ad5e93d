"""Black-Scholes call price and its spot derivatives up to sixth order.

For ``n >= 2`` the derivatives have the form

    d^n C / dS^n = pdf(d1) * S**(1 - n) * R_n(d1, 1/v),   v = sigma_bar * sqrt(T - t),

where ``R_n`` is a polynomial in ``d1`` and ``1/v``.  Differentiating once
more (using ``d d1/dS = 1/(S v)``) gives the recursion

    R_{n+1} = (dR_n/dd1 - d1 R_n) / v - (n - 1) R_n,    R_2 = 1/v,

which is expanded symbolically once at import time into integer
coefficient tables.  Nested numerical differentiation is avoided because
sixth derivatives would lose most of their digits.

The normal CDF is ``scipy.special.ndtr`` (erf based, ~1e-16 absolute).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtr

from .model import MarketParams

__all__ = ["GreeksBundle", "MAX_ORDER", "bs_price", "bs_derivatives", "norm_cdf", "norm_pdf"]

MAX_ORDER = 6
_INV_SQRT_2PI = 0.3989422804014327


def norm_cdf(x):
    return ndtr(x)


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _build_tables(max_order: int) -> dict[int, np.ndarray]:
    # table[n][i, j] is the coefficient of d1**i * v**(-j) in R_n
    size = 2 * max_order + 2
    tables = {}
    cur = np.zeros((size, size))
    cur[0, 1] = 1.0
    tables[2] = cur.copy()
    for n in range(2, max_order):
        nxt = np.zeros_like(cur)
        # dR/dd1 / v
        nxt[:-1, 1:] += (np.arange(1, size)[:, None] * cur[1:, :])[:, :-1]
        # - d1 R / v
        nxt[1:, 1:] -= cur[:-1, :-1]
        # - (n - 1) R
        nxt -= (n - 1) * cur
        tables[n + 1] = nxt.copy()
        cur = nxt
    return tables


_TABLES = _build_tables(MAX_ORDER)


def _eval_table(table: np.ndarray, d1, inv_v):
    d1 = np.asarray(d1, dtype=float)
    inv_v = np.asarray(inv_v, dtype=float)
    out = np.zeros(np.broadcast(d1, inv_v).shape)
    rows, cols = np.nonzero(table)
    for i, j in zip(rows, cols):
        out = out + table[i, j] * d1**i * inv_v**j
    return out


@dataclass(frozen=True)
class GreeksBundle:
    """Price, ``d1``, ``d2`` and ``dS[n]`` = n-th spot derivative (``dS[0]`` is the price)."""

    price: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    dS: Optional[tuple] = None

    def deriv(self, n: int):
        if self.dS is None or n >= len(self.dS):
            raise ValueError(f"derivative of order {n} was not computed")
        return self.dS[n]


def _tau(t, params: MarketParams):
    t = np.asarray(t, dtype=float)
    if np.any(t > params.T) or np.any(t < 0):
        raise ValueError(f"t must lie in [0, T={params.T}]")
    return params.T - t


def _d1_d2(S, tau, sigma_bar, params):
    v = sigma_bar * np.sqrt(tau)
    with np.errstate(divide="ignore"):
        d1 = (np.log(S / params.K) + (params.r + 0.5 * sigma_bar**2) * tau) / v
    return d1, d1 - v, v


def bs_price(S, t, sigma_bar: float, params: MarketParams) -> GreeksBundle:
    """European call price with constant volatility ``sigma_bar``.

    At ``t = T`` the payoff ``max(S - K, 0)`` is returned with
    ``d1 = d2 = nan``.
    """
    S = np.asarray(S, dtype=float)
    if np.any(S < 0):
        raise ValueError("S must be non-negative")
    if sigma_bar <= 0:
        raise ValueError("sigma_bar must be positive")
    tau = _tau(t, params)
    S, tau = np.broadcast_arrays(S, tau)
    price = np.array(np.maximum(S - params.K, 0.0), dtype=float)
    d1 = np.full(S.shape, np.nan)
    d2 = np.full(S.shape, np.nan)
    live = (tau > 0) & (S > 0)
    if np.any(live):
        a, b, _ = _d1_d2(S[live], tau[live], sigma_bar, params)
        disc = np.exp(-params.r * tau[live])
        price[live] = S[live] * ndtr(a) - params.K * disc * ndtr(b)
        d1[live], d2[live] = a, b
    price[(tau > 0) & (S == 0)] = 0.0
    return GreeksBundle(price=price[()], d1=d1[()], d2=d2[()])


def bs_derivatives(S, t, sigma_bar: float, params: MarketParams, max_order: int = MAX_ORDER) -> GreeksBundle:
    """Analytic spot derivatives of the call price, orders ``0..max_order``."""
    if max_order > MAX_ORDER or max_order < 0:
        raise ValueError(f"unsupported derivative order {max_order} (max {MAX_ORDER})")
    S = np.asarray(S, dtype=float)
    if np.any(S <= 0):
        raise ValueError("S must be positive for derivatives")
    if sigma_bar <= 0:
        raise ValueError("sigma_bar must be positive")
    tau = _tau(t, params)
    if np.any(tau <= 0):
        raise ValueError("derivatives are not defined at expiry (t = T)")
    S, tau = np.broadcast_arrays(S, tau)
    d1, d2, v = _d1_d2(S, tau, sigma_bar, params)
    price = S * ndtr(d1) - params.K * np.exp(-params.r * tau) * ndtr(d2)
    out = [price, ndtr(d1)]
    if max_order >= 2:
        pdf = norm_pdf(d1)
        inv_v = 1.0 / v
        for n in range(2, max_order + 1):
            out.append(pdf * S ** (1 - n) * _eval_table(_TABLES[n], d1, inv_v))
    out = out[: max_order + 1]
    return GreeksBundle(price=price[()], d1=d1[()], d2=d2[()], dS=tuple(o[()] for o in out))
