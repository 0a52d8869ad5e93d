"""Monte Carlo of bond, shares, stock and volatility driver under a hedging policy.

Paths are simulated in fixed-size blocks.  Block ``b`` draws from its own
Philox stream keyed on ``(seed, b)``, so results do not depend on how
blocks are scheduled, and block statistics are reduced in block order.
Both investor sides are run on the same random numbers.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import hedging
from .bs_kernel import bs_derivatives, bs_price
from .model import Asymptotics, MarketParams, OUVolModel, Side
from .ou_calculus import AverageSet

__all__ = [
    "StabilityWarning",
    "PathState",
    "SimConfig",
    "SideStats",
    "SimResult",
    "POLICIES",
    "step",
    "rebalance",
    "liquidation_value",
    "terminal_value",
    "utility",
    "simulate_block",
    "run",
]

POLICIES = ("band", "bs_delta", "none", "scaled_band")


class StabilityWarning(UserWarning):
    """The time step does not resolve the fast volatility driver."""


@dataclass(frozen=True)
class PathState:
    t: float
    B: np.ndarray
    y: np.ndarray
    S: np.ndarray
    z: np.ndarray


@dataclass(frozen=True)
class SimConfig:
    n_paths: int
    n_steps: int
    seed: int = 0
    rebalance_every: int = 1
    policy: str = "band"
    kappa: float = 1.0
    S0: float = 100.0
    z0: Optional[float] = None
    t0: float = 0.0
    block_size: int = 8192
    allow_coarse: bool = False

    def __post_init__(self):
        if self.n_paths < 1 or self.n_steps < 1:
            raise ValueError("n_paths and n_steps must be at least 1")
        if self.rebalance_every < 1 or self.block_size < 1:
            raise ValueError("rebalance_every and block_size must be at least 1")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; choose from {POLICIES}")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.S0 > 0:
            raise ValueError("S0 must be positive")


@dataclass(frozen=True)
class SideStats:
    side: Side
    wealth_mean: float
    wealth_std: float
    wealth_se: float
    utility_mean: float
    utility_std: float
    utility_se: float
    trades_mean: float
    trades_se: float
    costs_mean: float

    def as_row(self) -> dict:
        return {
            "side": self.side.value,
            "wealth_mean": self.wealth_mean,
            "wealth_std": self.wealth_std,
            "wealth_se": self.wealth_se,
            "utility_mean": self.utility_mean,
            "utility_std": self.utility_std,
            "utility_se": self.utility_se,
            "trades_mean": self.trades_mean,
            "trades_se": self.trades_se,
            "costs_mean": self.costs_mean,
        }


@dataclass(frozen=True)
class SimResult:
    config: SimConfig
    epsilon: float
    sides: dict
    disc_S_mean: float
    disc_S_se: float
    terminal: dict = field(default_factory=dict, repr=False)

    def rows(self) -> list[dict]:
        out = []
        for side in (Side.PLAIN, Side.WRITER):
            row = {"policy": self.config.policy, "kappa": self.config.kappa}
            row.update(self.sides[side].as_row())
            out.append(row)
        return out


def step(state: PathState, dt: float, normals, model: OUVolModel, asym: Asymptotics, params: MarketParams) -> PathState:
    """Advance one step: exact log-Euler for S, Euler for z, bond at rate r."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if dt >= asym.epsilon / 2 and model.nu > 0:
        warnings.warn(f"dt={dt:g} >= eps/2 under-resolves the volatility driver", StabilityWarning, stacklevel=2)
    xi1, xi2 = normals
    f = model.vol(state.z)
    sq = math.sqrt(dt)
    S = state.S * np.exp((params.alpha - 0.5 * f * f) * dt + f * sq * xi1)
    shock = model.rho * xi1 + math.sqrt(max(0.0, 1.0 - model.rho**2)) * xi2
    z = state.z + (model.m - state.z) / asym.epsilon * dt + asym.z_diffusion(model.nu) * sq * shock
    B = state.B * math.exp(params.r * dt)
    return PathState(state.t + dt, B, state.y, S, z)


def rebalance(state: PathState, lower, upper, cost: float):
    """Trade to the nearest band edge; return the new state, trade mask and cost paid."""
    y = state.y
    target = np.clip(y, lower, upper)
    dy = target - y
    buy = dy > 0
    cash = np.where(buy, -(1 + cost) * state.S * dy, -(1 - cost) * state.S * dy)
    paid = cost * state.S * np.abs(dy)
    traded = dy != 0
    return replace(state, B=state.B + cash, y=target), traded, paid


def liquidation_value(y, S, cost: float):
    """Cash from closing ``y`` shares: ``(1 - cost) y S`` when long, ``(1 + cost) y S`` when short."""
    y = np.asarray(y, dtype=float)
    return np.where(y >= 0, (1 - cost) * y * S, (1 + cost) * y * S)


def terminal_value(side: Side, state: PathState, params: MarketParams, cost: float):
    """Terminal wealth; the writer delivers one share against ``K`` when ``S > K`` (ties count as out of the money)."""
    plain = state.B + liquidation_value(state.y, state.S, cost)
    if side is Side.PLAIN:
        return plain
    exercised = state.B + liquidation_value(state.y - 1.0, state.S, cost) + params.K
    return np.where(state.S > params.K, exercised, plain)


def utility(x, gamma: float):
    """Exponential utility ``1 - exp(-gamma x)``."""
    return -np.expm1(-gamma * np.asarray(x, dtype=float))


def _targets(side, policy, kappa, state, epsilon, averages, model, params):
    if policy == "bs_delta":
        if side is Side.PLAIN:
            c = np.zeros_like(state.S)
        else:
            c = bs_derivatives(state.S, state.t, averages.sigma_bar, params, 1).dS[1]
        return c, c
    b = hedging.band(side, state.S, state.t, state.z, epsilon, averages, model, params)
    hw = kappa * b.half_width
    return b.y_star - hw, b.y_star + hw


def simulate_block(
    block: int,
    n: int,
    config: SimConfig,
    epsilon: float,
    averages: AverageSet,
    model: OUVolModel,
    params: MarketParams,
) -> dict:
    """Simulate ``n`` paths of block ``block`` for both sides; returns per-path arrays."""
    rng = np.random.Generator(np.random.Philox(key=[config.seed, block]))
    asym = Asymptotics(epsilon)
    cost = asym.cost
    dt = (params.T - config.t0) / config.n_steps
    z0 = model.m if config.z0 is None else config.z0
    S = np.full(n, config.S0)
    z = np.full(n, float(z0))
    premium = float(bs_price(config.S0, config.t0, averages.sigma_bar, params).price)
    states = {
        Side.PLAIN: PathState(config.t0, np.zeros(n), np.zeros(n), S, z),
        Side.WRITER: PathState(config.t0, np.full(n, premium), np.zeros(n), S, z),
    }
    trades = {s: np.zeros(n) for s in states}
    paid = {s: np.zeros(n) for s in states}
    with warnings.catch_warnings():
        # the step size is checked once by run()
        warnings.simplefilter("ignore", StabilityWarning)
        for k in range(config.n_steps):
            if config.policy != "none" and k % config.rebalance_every == 0:
                for side, st in states.items():
                    lo, hi = _targets(side, config.policy, config.kappa, st, epsilon, averages, model, params)
                    st, traded, c = rebalance(st, lo, hi, cost)
                    states[side] = st
                    trades[side] += traded
                    paid[side] += c
            normals = rng.standard_normal((2, n))
            for side, st in states.items():
                states[side] = step(st, dt, normals, model, asym, params)
    # guard against accumulated rounding in t
    out = {"S": states[Side.PLAIN].S, "z": states[Side.PLAIN].z}
    for side, st in states.items():
        st = replace(st, t=params.T)
        out[side] = dict(wealth=terminal_value(side, st, params, cost), trades=trades[side], costs=paid[side], y=st.y)
    return out


def _stats(x):
    n = x.size
    mean = float(x.mean())
    std = float(x.std(ddof=1)) if n > 1 else 0.0
    return mean, std, std / math.sqrt(n)


def run(
    config: SimConfig,
    epsilon: float,
    averages: AverageSet,
    model: OUVolModel,
    params: MarketParams,
    *,
    keep_paths: bool = False,
) -> SimResult:
    """Simulate ``config.n_paths`` paths and summarise terminal wealth and utility per side."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not 0 <= config.t0 < params.T:
        raise ValueError("t0 must lie in [0, T)")
    dt = (params.T - config.t0) / config.n_steps
    z0 = model.m if config.z0 is None else config.z0
    frozen_driver = model.nu == 0 and z0 == model.m
    if dt > epsilon / 10 and not frozen_driver:
        msg = f"dt={dt:g} exceeds eps/10={epsilon / 10:g}; the volatility driver is under-resolved"
        if not config.allow_coarse:
            raise ValueError(msg + " (set allow_coarse to override)")
        warnings.warn(msg, StabilityWarning, stacklevel=2)

    blocks = []
    start = 0
    b = 0
    while start < config.n_paths:
        n = min(config.block_size, config.n_paths - start)
        blocks.append(simulate_block(b, n, config, epsilon, averages, model, params))
        start += n
        b += 1

    S_T = np.concatenate([blk["S"] for blk in blocks])
    disc = math.exp(-params.r * (params.T - config.t0)) * S_T
    dmean, _, dse = _stats(disc)
    sides = {}
    terminal = {"S": S_T, "z": np.concatenate([blk["z"] for blk in blocks])} if keep_paths else {}
    for side in (Side.PLAIN, Side.WRITER):
        w = np.concatenate([blk[side]["wealth"] for blk in blocks])
        tr = np.concatenate([blk[side]["trades"] for blk in blocks])
        co = np.concatenate([blk[side]["costs"] for blk in blocks])
        u = utility(w, params.gamma)
        wm, ws, wse = _stats(w)
        um, us, use = _stats(u)
        tm, _, tse = _stats(tr)
        sides[side] = SideStats(side, wm, ws, wse, um, us, use, tm, tse, float(co.mean()))
        if keep_paths:
            terminal[side] = {"wealth": w, "trades": tr, "y": np.concatenate([blk[side]["y"] for blk in blocks])}
    return SimResult(config, float(epsilon), sides, dmean, dse, terminal)
