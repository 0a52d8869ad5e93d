"""Plot data for the band and price figures.

``fig1``/``fig2``: hedge centre and band edges against S for several
volatility levels, for the plain investor and the option writer.
``fig3``: call price without and with the corrections, at ``rho = 0``
(``fig3a``) and ``rho = -0.2`` (``fig3b``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import expansion, hedging
from .model import MarketParams, OUVolModel, Side
from .ou_calculus import build_average_set
from .tables import Table

__all__ = ["FigureSet", "FIGURE_SETS", "BAND_FIG_COLUMNS", "PRICE_FIG_COLUMNS", "m_from_sigma_bar", "band_figure", "price_figure", "build"]

BAND_FIG_COLUMNS = ("vol", "S", "y_star", "lower", "upper")
PRICE_FIG_COLUMNS = ("S", "C_BS", "C_with_C3", "C_with_C3_and_C6")


def m_from_sigma_bar(sigma_bar: float, nu: float) -> float:
    """Long-run mean giving ``<exp(2z)> = sigma_bar**2``."""
    return math.log(sigma_bar) - nu**2


@dataclass(frozen=True)
class FigureSet:
    name: str
    K: float
    r: float
    alpha: float
    gamma: float
    sigma_bar: float
    T: float
    epsilon: float
    S_range: tuple
    n_S: int
    side: Optional[Side] = None
    rhos: tuple = (0.0,)
    vol_levels: tuple = field(default=())


FIGURE_SETS = {
    "fig1": FigureSet(
        "fig1", K=0.5, r=0.07, alpha=0.1, gamma=1.0, sigma_bar=0.2, T=0.3, epsilon=1 / 200,
        S_range=(0.01, 1.5), n_S=150, side=Side.PLAIN, vol_levels=(0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6),
    ),
    "fig2": FigureSet(
        "fig2", K=0.5, r=0.07, alpha=0.1, gamma=1.0, sigma_bar=0.2, T=0.3, epsilon=1 / 200,
        S_range=(0.01, 1.5), n_S=150, side=Side.WRITER, vol_levels=(0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6),
    ),
    "fig3": FigureSet(
        "fig3", K=100.0, r=0.04, alpha=0.1, gamma=1.0, sigma_bar=0.165, T=3.0, epsilon=1 / 200,
        S_range=(50.0, 150.0), n_S=101, rhos=(0.0, -0.2),
    ),
}


def _params(fs: FigureSet) -> MarketParams:
    return MarketParams(r=fs.r, alpha=fs.alpha, gamma=fs.gamma, K=fs.K, T=fs.T)


def band_figure(fs: FigureSet, nu: float, m: Optional[float] = None) -> Table:
    """Rows of ``(vol, S, y*, lower, upper)`` at ``t = 0``, one block per volatility level."""
    m = m_from_sigma_bar(fs.sigma_bar, nu) if m is None else m
    model = OUVolModel(m=m, nu=nu, rho=fs.rhos[0])
    params = _params(fs)
    averages = build_average_set(model)
    S = np.linspace(*fs.S_range, fs.n_S)
    table = Table(BAND_FIG_COLUMNS)
    for vol in fs.vol_levels:
        b = hedging.band(fs.side, S, 0.0, math.log(vol), fs.epsilon, averages, model, params)
        for i in range(S.size):
            table.add(vol, S[i], b.y_star[i], b.lower[i], b.upper[i])
    return table


def price_figure(fs: FigureSet, nu: float, rho: float, m: Optional[float] = None, z: Optional[float] = None, c6_method: str = "printed") -> Table:
    """Rows of ``(S, C_BS, C_BS + sqrt(eps) C3, total)`` at ``t = 0``."""
    m = m_from_sigma_bar(fs.sigma_bar, nu) if m is None else m
    model = OUVolModel(m=m, nu=nu, rho=rho)
    params = _params(fs)
    averages = build_average_set(model)
    S = np.linspace(*fs.S_range, fs.n_S)
    z = m if z is None else z
    pe = expansion.price(S, 0.0, z, fs.epsilon, averages, model, params)
    c6_tilde = pe.c6_tilde
    if c6_method == "pde":
        from .verification import c6_tilde_pde

        c6_tilde = c6_tilde_pde(S, 0.0, averages, model, params)
        pe = replace(pe, c6_tilde=c6_tilde)
    elif c6_method != "printed":
        raise ValueError("c6_method must be 'printed' or 'pde'")
    table = Table(PRICE_FIG_COLUMNS)
    for i in range(S.size):
        table.add(S[i], pe.c0[i], pe.with_c3[i], pe.total[i])
    return table


def build(name: str, nu: float, m: Optional[float] = None, c6_method: str = "printed") -> dict[str, Table]:
    """All tables of one figure set keyed by output file stem."""
    fs = FIGURE_SETS[name]
    if name == "fig3":
        return {
            "fig3a": price_figure(fs, nu, 0.0, m, c6_method=c6_method),
            "fig3b": price_figure(fs, nu, -0.2, m, c6_method=c6_method),
        }
    return {name: band_figure(fs, nu, m)}
