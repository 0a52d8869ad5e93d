"""Model parameters shared by every other module.

The market is a bond paying ``r``, a stock with drift ``alpha`` and
volatility ``f(z)``, and a fast mean-reverting Ornstein-Uhlenbeck driver
``z`` with long-run mean ``m`` and invariant standard deviation ``nu``.
Small proportional transaction costs and the fast time scale are both
tied to one small parameter ``epsilon``.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "ConfigError",
    "ScottWarning",
    "MarketParams",
    "OUVolModel",
    "Asymptotics",
    "Side",
    "ValidatedConfig",
    "discount_factor",
    "validate",
]


class ConfigError(ValueError):
    """Raised when a configuration violates a model invariant.

    ``problems`` maps each offending field name to a message.
    """

    def __init__(self, problems: dict[str, str]):
        self.problems = dict(problems)
        super().__init__("; ".join(f"{k}: {v}" for k, v in self.problems.items()))


class ScottWarning(UserWarning):
    """The exponential volatility function is unbounded above."""


class Side(enum.Enum):
    """Investor without the option (``PLAIN``) or short one call (``WRITER``)."""

    PLAIN = "plain"
    WRITER = "writer"


@dataclass(frozen=True)
class MarketParams:
    r: float
    alpha: float
    gamma: float
    K: float
    T: float

    @property
    def excess_return(self) -> float:
        return self.alpha - self.r


def _scott(z):
    return np.exp(z)


@dataclass(frozen=True)
class OUVolModel:
    """Volatility driver ``dz = (m - z)/eps dt + sqrt(2) nu/sqrt(eps) dW``.

    ``f=None`` selects the Scott model ``f(z) = exp(z)``.  A user supplied
    ``f`` must be vectorised over numpy arrays and come with bounds
    ``(m1, m2)`` such that ``0 < m1 <= f(z) <= m2``.
    """

    m: float
    nu: float
    rho: float
    f: Optional[Callable] = None
    f_bounds: Optional[tuple[float, float]] = None

    @property
    def is_scott(self) -> bool:
        return self.f is None

    def vol(self, z):
        """Evaluate the volatility function at ``z``."""
        if self.f is None:
            return _scott(np.asarray(z, dtype=float))
        return np.asarray(self.f(np.asarray(z, dtype=float)), dtype=float)

    def __call__(self, z):
        return self.vol(z)


@dataclass(frozen=True)
class Asymptotics:
    epsilon: float

    @property
    def cost(self) -> float:
        """Proportional buying/selling cost ``lambda = mu = eps**2``."""
        return self.epsilon**2

    @property
    def reversion_rate(self) -> float:
        return 1.0 / self.epsilon

    def z_diffusion(self, nu: float) -> float:
        """Diffusion coefficient of ``z``: ``sqrt(2) nu / sqrt(eps)``."""
        return math.sqrt(2.0) * nu / math.sqrt(self.epsilon)


@dataclass(frozen=True)
class ValidatedConfig:
    params: MarketParams
    model: OUVolModel
    asym: Optional[Asymptotics] = None
    warnings: tuple[str, ...] = field(default_factory=tuple)


def discount_factor(t, params: MarketParams):
    """``exp(-r (T - t))``.  ``t`` may be an array; every entry must lie in [0, T]."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0.0) or np.any(t_arr > params.T):
        raise ValueError(f"t must lie in [0, T={params.T}]")
    out = np.exp(-params.r * (params.T - t_arr))
    return float(out) if out.ndim == 0 else out


def validate(
    params: MarketParams,
    model: OUVolModel,
    asym: Optional[Asymptotics] = None,
    *,
    warn: bool = True,
) -> ValidatedConfig:
    """Check every invariant and collect all violations before raising."""
    problems: dict[str, str] = {}
    notes: list[str] = []

    if not (np.isfinite(params.gamma) and params.gamma > 0):
        problems["gamma"] = "gamma must be positive"
    if not (np.isfinite(params.K) and params.K > 0):
        problems["K"] = "K must be positive"
    if not (np.isfinite(params.T) and params.T > 0):
        problems["T"] = "T must be positive"
    for name in ("r", "alpha"):
        if not np.isfinite(getattr(params, name)):
            problems[name] = f"{name} must be finite"

    if not np.isfinite(model.m):
        problems["m"] = "m must be finite"
    if not (np.isfinite(model.nu) and model.nu >= 0):
        problems["nu"] = "nu must be non-negative"
    if not (np.isfinite(model.rho) and abs(model.rho) <= 1.0):
        problems["rho"] = "rho out of range"

    if model.is_scott:
        notes.append("Scott volatility exp(z) is not bounded above; accepted as a modelling choice")
    elif "nu" not in problems and "m" not in problems:
        if model.f_bounds is None:
            problems["f_bounds"] = "a custom volatility function needs bounds (m1, m2)"
        else:
            m1, m2 = model.f_bounds
            if not (0 < m1 <= m2 < np.inf):
                problems["f_bounds"] = "bounds must satisfy 0 < m1 <= m2 < inf"
            else:
                span = 8.0 * max(model.nu, 1.0)
                zs = np.linspace(model.m - span, model.m + span, 2001)
                vals = model.vol(zs)
                if not np.all(np.isfinite(vals)):
                    problems["f"] = "volatility function returned non-finite values"
                elif vals.min() < m1 * (1 - 1e-12) or vals.max() > m2 * (1 + 1e-12):
                    problems["f"] = f"volatility function leaves [{m1}, {m2}]"

    if asym is not None and not (np.isfinite(asym.epsilon) and asym.epsilon > 0):
        problems["epsilon"] = "epsilon must be positive"

    if problems:
        raise ConfigError(problems)
    if warn:
        for msg in notes:
            warnings.warn(msg, ScottWarning, stacklevel=2)
    return ValidatedConfig(params, model, asym, tuple(notes))
