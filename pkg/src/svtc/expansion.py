"""Asymptotic call price ``C = C0 + sqrt(eps) C3 + eps (C6_z + C6_tilde)``.

``C0`` is Black-Scholes at the averaged volatility, the ``eps**(1/3)``,
``eps**(2/3)`` and ``eps**(5/6)`` terms vanish identically, ``C3`` is the
fast-volatility correction and ``C6`` collects the first order at which
transaction costs, risk aversion and the volatility fluctuations interact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bs_kernel import bs_derivatives, bs_price
from .model import MarketParams, OUVolModel, Side
from .ou_calculus import AverageSet

__all__ = [
    "SourceCoeffs",
    "PriceExpansion",
    "u0",
    "u3",
    "u6_z",
    "c3",
    "c6_source_coeffs",
    "c6",
    "price",
]


@dataclass(frozen=True)
class SourceCoeffs:
    """Coefficients of ``<L2> C6 = tau^2 A_hat + tau B_hat + C_hat``."""

    A_hat: np.ndarray
    B_hat: np.ndarray
    C_hat: np.ndarray

    def source(self, tau):
        return tau**2 * self.A_hat + tau * self.B_hat + self.C_hat


@dataclass(frozen=True)
class PriceExpansion:
    c0: np.ndarray
    c3: np.ndarray
    c6_z: np.ndarray
    c6_tilde: np.ndarray
    epsilon: float

    @property
    def c6(self):
        return self.c6_z + self.c6_tilde

    @property
    def with_c3(self):
        return self.c0 + math.sqrt(self.epsilon) * self.c3

    @property
    def total(self):
        return self.with_c3 + self.epsilon * self.c6


def _tau_delta(t, params):
    tau = params.T - np.asarray(t, dtype=float)
    if np.any(tau < 0) or np.any(tau > params.T):
        raise ValueError(f"t must lie in [0, T={params.T}]")
    return tau, np.exp(-params.r * tau)


def _greeks(S, tau, averages, params, order):
    """Derivatives ``dS[0..order]`` with zeros wherever ``tau == 0``."""
    S, tau = np.broadcast_arrays(np.asarray(S, dtype=float), tau)
    live = tau > 0
    out = [np.zeros(S.shape) for _ in range(order + 1)]
    if np.any(live):
        g = bs_derivatives(S[live], params.T - tau[live], averages.sigma_bar, params, order)
        for n in range(order + 1):
            out[n][live] = g.dS[n]
    return S, tau, live, out


def u0(side: Side, S, t, averages: AverageSet, params: MarketParams):
    """Leading-order value function (without the ``S y`` part) for either investor."""
    tau, delta = _tau_delta(t, params)
    plain = tau * delta * params.excess_return**2 / (2 * params.gamma) * averages.inv_tau_sq
    plain = np.broadcast_to(plain, np.broadcast(np.asarray(S), tau).shape).astype(float)
    if side is Side.PLAIN:
        return plain[()]
    return (plain - bs_price(S, t, averages.sigma_bar, params).price)[()]


def _q_terms(S, C2, C3, averages, params):
    """``Q = <f phi'>(S^3 C_SSS + 2 S^2 C_SS) - (alpha - r) <phi'/f> S^2 C_SS``."""
    return averages.a_fphi * (S**3 * C3 + 2 * S**2 * C2) - params.excess_return * averages.a_phif * S**2 * C2


def c3(S, t, averages: AverageSet, model: OUVolModel, params: MarketParams):
    """Order ``sqrt(eps)`` price correction; zero at expiry and at ``rho = 0``."""
    tau, _ = _tau_delta(t, params)
    S, tau, live, d = _greeks(S, tau, averages, params, 3)
    pref = model.nu * model.rho / math.sqrt(2.0)
    return (-tau * pref * _q_terms(S, d[2], d[3], averages, params))[()]


def u3(side: Side, S, t, averages: AverageSet, model: OUVolModel, params: MarketParams):
    """``U3`` for each investor; ``u3(PLAIN) - u3(WRITER) == c3``."""
    tau, delta = _tau_delta(t, params)
    pref = model.nu * model.rho / math.sqrt(2.0)
    plain = tau * pref * (delta / params.gamma) * params.excess_return**3 * averages.a_psif
    plain = np.broadcast_to(plain, np.broadcast(np.asarray(S), tau).shape).astype(float)
    if side is Side.PLAIN:
        return plain[()]
    # written out from the writer's own source rather than as plain - c3
    S_, tau_, live, d = _greeks(S, tau, averages, params, 3)
    a, b = averages.a_fphi, params.excess_return * averages.a_phif
    bracket = (
        -(delta / params.gamma) * params.excess_return**3 * averages.a_psif
        - a * (S_**3 * d[3] + 2 * S_**2 * d[2])
        + b * S_**2 * d[2]
    )
    return (-tau_ * pref * bracket)[()]


def u6_z(side: Side, S, t, z, averages: AverageSet, params: MarketParams):
    """z-dependent part ``-(1/2 S^2 U0_SS phi(z) + 1/2 (delta/gamma)(alpha-r)^2 psi(z))``."""
    tau, delta = _tau_delta(t, params)
    phi, psi = _phi_psi(averages, z)
    speculative = 0.5 * (delta / params.gamma) * params.excess_return**2 * psi
    if side is Side.PLAIN:
        return (-speculative * np.ones(np.broadcast(np.asarray(S), tau).shape))[()]
    S_, tau_, live, d = _greeks(S, tau, averages, params, 2)
    return (0.5 * S_**2 * d[2] * phi - speculative)[()]


def _phi_psi(averages: AverageSet, z):
    if averages.solutions is None:
        return 0.0, 0.0
    return averages.solutions["phi"](z), averages.solutions["psi"](z)


def c6_source_coeffs(S, t, averages: AverageSet, model: OUVolModel, params: MarketParams) -> SourceCoeffs:
    """The three source coefficients of the ``C6`` equation, as printed."""
    tau, delta = _tau_delta(t, params)
    if np.any(tau <= 0):
        raise ValueError("source coefficients need t < T")
    S, tau, live, d = _greeks(S, tau, averages, params, 6)
    C2, C3, C4, C5, C6 = d[2], d[3], d[4], d[5], d[6]
    nu, rho, gam = model.nu, model.rho, params.gamma
    ar = params.excess_return
    a, p = averages.a_fphi, averages.a_phif
    s2 = averages.sigma_bar_sq
    n2r2 = nu**2 * rho**2

    A_hat = (
        -n2r2 / 4 * (gam / delta) * S**2 * s2
        * (a * (S**3 * C4 + 5 * S**2 * C3 + 4 * S * C2) - ar * p * (S**2 * C3 + 2 * S * C2)) ** 2
    )
    B_hat = (
        -n2r2 * S**2 * (a - 0.5 * ar * p)
        * (a * (S**3 * C5 + 8 * S**2 * C4 + 14 * S * C3 + 4 * C2) - ar * p * (S**2 * C4 + 4 * S * C3 + 2 * C2))
        - n2r2 / 2 * S**3 * a
        * ((S**3 * C6 + 11 * S**2 * C5 + 30 * S * C4 + 18 * C3) * a - ar * (S**2 * C5 + 6 * S * C4 + 6 * C3) * p)
        - n2r2 / 2 * (gam / delta) * S
        * (a * (S**3 * C4 + 5 * S**2 * C3 + 4 * S * C2) - ar * p * (2 * S * C2 + S**2 * C3))
        * (S**2 * C2 * averages.a_fphi - (delta / gam) * ar**2 * averages.a_psif_up)
    )
    C_hat = (
        nu**2 * (gam / delta)
        * (-0.25 * S**4 * C2**2 * averages.a_phi2 + 0.5 * (delta / gam) * ar**2 * S**2 * C2 * averages.a_phipsi)
        - n2r2 * ar * (ar * S**2 * C2 * averages.a_Ginvf - (S**3 * C3 + 2 * S**2 * C2) * averages.a_Finvf)
        - n2r2
        * ((S**4 * C4 + 5 * S**3 * C3 + 4 * S**2 * C2) * averages.a_Ff - ar * (S**3 * C3 + 2 * S**2 * C2) * averages.a_Gf)
    )
    return SourceCoeffs(A_hat[()], B_hat[()], C_hat[()])


def c6(S, t, z, averages: AverageSet, model: OUVolModel, params: MarketParams):
    """Return ``(c6_z, c6_tilde)``; both are zero at expiry.

    ``c6_tilde`` is the cubic-in-``tau`` formula built from the source
    coefficients frozen at ``(S, t)``.
    """
    tau, _ = _tau_delta(t, params)
    S_, tau_, live, d = _greeks(S, tau, averages, params, 2)
    phi, _psi = _phi_psi(averages, z)
    cz = -0.5 * S_**2 * d[2] * phi
    ct = np.zeros(S_.shape)
    if np.any(live):
        co = c6_source_coeffs(S_[live], params.T - tau_[live], averages, model, params)
        tl = tau_[live]
        ct[live] = tl**3 / 3 * co.A_hat + tl**2 / 2 * co.B_hat + tl * co.C_hat
    return cz[()], ct[()]


def price(S, t, z, epsilon: float, averages: AverageSet, model: OUVolModel, params: MarketParams) -> PriceExpansion:
    """Corrected price; ``epsilon = 0`` collapses to Black-Scholes."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    c0 = bs_price(S, t, averages.sigma_bar, params).price
    cz, ct = c6(S, t, z, averages, model, params)
    return PriceExpansion(
        c0=np.asarray(c0)[()],
        c3=c3(S, t, averages, model, params),
        c6_z=cz,
        c6_tilde=ct,
        epsilon=float(epsilon),
    )
