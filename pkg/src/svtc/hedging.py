"""Hedge centre ``y*``, the ``eps**(1/3)`` no-transaction band and its inner profile.

Inside the band the rescaled holding ``Y = (y - y*) / eps**(1/3)`` sees the
quartic ``U14(Y) = A Y**4 / 12 + B Y**2 / 2``; smooth pasting at ``+-Y+``
and the unit-cost gradient condition fix ``A``, ``B`` and ``Y+``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bs_kernel import bs_derivatives
from .model import MarketParams, OUVolModel, Side, discount_factor
from .ou_calculus import AverageSet

__all__ = [
    "HedgeBand",
    "InnerProfile",
    "DegenerateBandError",
    "y_star",
    "y_star_z",
    "band",
    "band_half_width_scott",
    "inner_profile",
]


class DegenerateBandError(ValueError):
    """The inner layer does not exist because ``nu * y*_z == 0``."""


@dataclass(frozen=True)
class HedgeBand:
    y_star: np.ndarray
    half_width: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def contains(self, y) -> np.ndarray:
        return (self.lower <= y) & (y <= self.upper)

    def project(self, y) -> np.ndarray:
        """Nearest point of the band (the rebalancing target)."""
        return np.clip(y, self.lower, self.upper)


@dataclass(frozen=True)
class InnerProfile:
    A: float
    B: float
    S: float

    @property
    def Y_plus(self) -> float:
        return math.sqrt(-self.B / self.A)

    @property
    def C(self) -> float:
        # the odd coefficient is forced to zero by the symmetric boundary conditions
        return 0.0

    def __call__(self, Y):
        Y = np.asarray(Y, dtype=float)
        return self.A * Y**4 / 12 + self.B * Y**2 / 2

    def dY(self, Y):
        Y = np.asarray(Y, dtype=float)
        return self.A * Y**3 / 3 + self.B * Y

    def dYY(self, Y):
        Y = np.asarray(Y, dtype=float)
        return self.A * Y**2 + self.B


def _check_S(S):
    S = np.asarray(S, dtype=float)
    if np.any(S <= 0):
        raise ValueError("S must be positive")
    return S


def _speculative(S, t, z, model, params):
    delta = discount_factor(t, params)
    return params.excess_return * delta / (model.vol(z) ** 2 * S * params.gamma)


def y_star(side: Side, S, t, z, averages: AverageSet, model: OUVolModel, params: MarketParams):
    """Leading-order holding: speculative demand, plus the call delta for the writer."""
    S = _check_S(S)
    spec = _speculative(S, t, z, model, params)
    if side is Side.PLAIN:
        return np.asarray(spec)[()]
    tau = params.T - np.asarray(t, dtype=float)
    S_b, tau_b = np.broadcast_arrays(S, tau)
    delta_hedge = np.where(S_b > params.K, 1.0, 0.0)
    live = tau_b > 0
    if np.any(live):
        t_live = params.T - tau_b[live]
        delta_hedge[live] = bs_derivatives(S_b[live], t_live, averages.sigma_bar, params, 1).dS[1]
    return np.asarray(delta_hedge + spec)[()]


def y_star_z(S, t, z, model: OUVolModel, params: MarketParams, *, h: float = 1e-5):
    """``d y*/dz``; the same for both sides because only the speculative part depends on z."""
    S = _check_S(S)
    delta = discount_factor(t, params)
    if model.is_scott:
        return np.asarray(-2 * params.excess_return * delta / (np.exp(2 * np.asarray(z, dtype=float)) * S * params.gamma))[()]
    z = np.asarray(z, dtype=float)
    up = _speculative(S, t, z + h, model, params)
    dn = _speculative(S, t, z - h, model, params)
    return np.asarray((up - dn) / (2 * h))[()]


def _y_plus(S, t, z, model, params):
    delta = discount_factor(t, params)
    yz = y_star_z(S, t, z, model, params)
    return np.cbrt(1.5 / (model.vol(z) ** 2 * S) * (delta / params.gamma) * model.nu**2 * yz**2)


def band(side: Side, S, t, z, epsilon: float, averages: AverageSet, model: OUVolModel, params: MarketParams) -> HedgeBand:
    """Symmetric no-transaction band around ``y*`` of half-width ``eps**(1/3) Y+``."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    S = _check_S(S)
    center = np.asarray(y_star(side, S, t, z, averages, model, params))
    hw = np.cbrt(epsilon) * np.asarray(_y_plus(S, t, z, model, params))
    center, hw = np.broadcast_arrays(center, hw)
    return HedgeBand(center[()], hw[()], (center - hw)[()], (center + hw)[()])


def band_half_width_scott(S, t, z, epsilon: float, model: OUVolModel, params: MarketParams):
    """Closed form for ``f = exp(z)``: ``eps**(1/3) [6 (a-r)^2 nu^2 delta^3 / (e^{6z} S^3 gamma^3)]**(1/3)``."""
    S = _check_S(S)
    delta = discount_factor(t, params)
    inner = 6 * params.excess_return**2 * model.nu**2 * delta**3 / (np.exp(6 * np.asarray(z, dtype=float)) * S**3 * params.gamma**3)
    return np.asarray(np.cbrt(epsilon) * np.cbrt(inner))[()]


def inner_profile(S: float, t: float, z: float, model: OUVolModel, params: MarketParams) -> InnerProfile:
    """Quartic inner solution with ``A = (gamma/delta) f^2 S^2 / (nu^2 y*_z^2)`` and ``B = -A Y+^2``."""
    S = float(_check_S(S))
    yz = float(y_star_z(S, t, z, model, params))
    if model.nu * yz == 0.0:
        raise DegenerateBandError("no inner layer when nu * y*_z == 0")
    delta = discount_factor(t, params)
    A = (params.gamma / delta) * float(model.vol(z)) ** 2 * S**2 / (model.nu**2 * yz**2)
    Yp = float(_y_plus(S, t, z, model, params))
    return InnerProfile(A=A, B=-A * Yp**2, S=S)
