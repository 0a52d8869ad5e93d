"""Command-line entry point ``svtc``.

Every subcommand reads an optional JSON config (``--config``) whose keys
are the :class:`RunConfig` field names; command-line flags override file
values.  Tables are written as CSV to ``--output`` (a file) or stdout;
``figures`` writes one file per table into ``--outdir``, which defaults to
``$SVTC_OUTPUT_DIR`` or the current directory.

Exit codes: 0 success, 1 verification failure, 2 bad configuration.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from . import expansion, figures, hedging, simulator
from .model import Asymptotics, ConfigError, MarketParams, OUVolModel, Side, validate
from .ou_calculus import AVERAGE_FIELDS, build_average_set, scott_closed_form
from .tables import Table

__all__ = ["RunConfig", "load_config", "main", "OUTPUT_DIR_ENV"]

OUTPUT_DIR_ENV = "SVTC_OUTPUT_DIR"
PRICE_COLUMNS = ("S", "C_BS", "C3", "C6_z", "C6_tilde", "total")
BAND_COLUMNS = ("S", "plain_y_star", "plain_lower", "plain_upper", "writer_y_star", "writer_lower", "writer_upper")
AVERAGES_COLUMNS = ("name", "quadrature", "closed_form", "rel_diff")
SIM_COLUMNS = (
    "policy", "kappa", "side", "wealth_mean", "wealth_std", "wealth_se",
    "utility_mean", "utility_std", "utility_se", "trades_mean", "trades_se", "costs_mean",
)
VERIFY_COLUMNS = ("check", "passed", "budget_seconds", "quantity", "value")


@dataclass
class RunConfig:
    r: Optional[float] = None
    alpha: Optional[float] = None
    gamma: Optional[float] = None
    K: Optional[float] = None
    T: Optional[float] = None
    m: Optional[float] = None
    sigma_bar: Optional[float] = None
    nu: Optional[float] = None
    rho: float = 0.0
    epsilon: Optional[float] = None
    t: float = 0.0
    z: Optional[float] = None
    S_min: Optional[float] = None
    S_max: Optional[float] = None
    n_S: int = 101
    c6_method: str = "printed"
    n_paths: int = 10_000
    n_steps: Optional[int] = None
    seed: int = 0
    rebalance_every: int = 1
    policy: str = "band"
    kappa: float = 1.0
    S0: Optional[float] = None
    n_nodes: int = 96
    output: Optional[str] = None
    outdir: Optional[str] = None
    set: Optional[str] = None
    checks: list = field(default_factory=list)

    def resolved_m(self) -> float:
        if self.m is not None:
            return self.m
        return figures.m_from_sigma_bar(self.sigma_bar, self.nu)


_MARKET = ("r", "alpha", "gamma", "K", "T")


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError({"config": f"file not found: {path}"})
    except json.JSONDecodeError as exc:
        raise ConfigError({"config": f"invalid JSON: {exc}"})
    if not isinstance(data, dict):
        raise ConfigError({"config": "top level must be a JSON object"})
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError({k: "unknown field" for k in unknown})
    return data


def _merge(args: argparse.Namespace) -> RunConfig:
    data = load_config(args.config)
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            data[f.name] = v
    if data.get("set") in figures.FIGURE_SETS:
        fs = figures.FIGURE_SETS[data["set"]]
        preset = dict(r=fs.r, alpha=fs.alpha, gamma=fs.gamma, K=fs.K, T=fs.T, epsilon=fs.epsilon,
                      S_min=fs.S_range[0], S_max=fs.S_range[1], n_S=fs.n_S)
        if data.get("m") is None:
            preset["sigma_bar"] = fs.sigma_bar
        for k, v in preset.items():
            data.setdefault(k, v)
    problems = {}
    cfg = RunConfig()
    for k, v in data.items():
        default = getattr(cfg, k)
        try:
            if k in ("output", "outdir", "set", "c6_method", "policy"):
                v = None if v is None else str(v)
            elif k == "checks":
                v = list(v)
            elif isinstance(default, int) or k in ("n_steps",):
                v = None if v is None else int(v)
            else:
                v = None if v is None else float(v)
        except (TypeError, ValueError):
            problems[k] = f"cannot interpret {v!r}"
            continue
        setattr(cfg, k, v)
    if problems:
        raise ConfigError(problems)
    return cfg


def _require(cfg: RunConfig, names: Sequence[str], problems: dict) -> None:
    for n in names:
        if getattr(cfg, n) is None:
            problems.setdefault(n, "required")


def _objects(cfg: RunConfig, *, need_epsilon: bool, allow_zero_epsilon: bool = False):
    problems: dict = {}
    _require(cfg, _MARKET + ("nu",), problems)
    if cfg.m is None and cfg.sigma_bar is None:
        problems["m"] = "give m or sigma_bar"
    if cfg.m is not None and cfg.sigma_bar is not None:
        problems["sigma_bar"] = "give either m or sigma_bar, not both"
    if cfg.sigma_bar is not None and not cfg.sigma_bar > 0:
        problems["sigma_bar"] = "sigma_bar must be positive"
    if need_epsilon:
        _require(cfg, ("epsilon",), problems)
    if cfg.c6_method not in ("printed", "pde"):
        problems["c6_method"] = "must be 'printed' or 'pde'"
    # missing values become nan so every other field is still checked
    nan = math.nan
    val = lambda v: nan if v is None else v  # noqa: E731
    params = MarketParams(r=val(cfg.r), alpha=val(cfg.alpha), gamma=val(cfg.gamma), K=val(cfg.K), T=val(cfg.T))
    m = nan
    if "m" not in problems and "sigma_bar" not in problems and cfg.nu is not None:
        m = cfg.resolved_m()
    model = OUVolModel(m=m, nu=val(cfg.nu), rho=cfg.rho)
    eps = cfg.epsilon
    asym = None
    if eps is not None and not (allow_zero_epsilon and eps == 0):
        asym = Asymptotics(eps)
    try:
        validate(params, model, asym, warn=False)
    except ConfigError as exc:
        for k, v in exc.problems.items():
            if not (k == "m" and math.isnan(m)):
                problems.setdefault(k, v)
    if cfg.T is not None and not 0 <= cfg.t <= cfg.T:
        problems["t"] = "t must lie in [0, T]"
    if problems:
        raise ConfigError(problems)
    return params, model


def _S_grid(cfg: RunConfig, params: MarketParams) -> np.ndarray:
    lo = cfg.S_min if cfg.S_min is not None else 0.5 * params.K
    hi = cfg.S_max if cfg.S_max is not None else 1.5 * params.K
    if not (0 < lo <= hi) or cfg.n_S < 1:
        raise ConfigError({"S_min": "need 0 < S_min <= S_max and n_S >= 1"})
    return np.linspace(lo, hi, int(cfg.n_S))


def _emit(table: Table, cfg: RunConfig) -> None:
    if cfg.output:
        table.to_csv(cfg.output)
    else:
        table.to_csv(sys.stdout)


def cmd_price(cfg: RunConfig) -> int:
    params, model = _objects(cfg, need_epsilon=True, allow_zero_epsilon=True)
    S = _S_grid(cfg, params)
    aset = build_average_set(model, n_nodes=int(cfg.n_nodes))
    z = model.m if cfg.z is None else cfg.z
    pe = expansion.price(S, cfg.t, z, cfg.epsilon, aset, model, params)
    if cfg.c6_method == "pde":
        from .verification import c6_tilde_pde

        pe = dataclasses.replace(pe, c6_tilde=c6_tilde_pde(S, cfg.t, aset, model, params))
    table = Table(PRICE_COLUMNS)
    parts = [np.broadcast_to(v, S.shape) for v in (pe.c0, pe.c3, pe.c6_z, pe.c6_tilde, pe.total)]
    for i in range(S.size):
        table.add(S[i], *(p[i] for p in parts))
    _emit(table, cfg)
    return 0


def cmd_band(cfg: RunConfig) -> int:
    params, model = _objects(cfg, need_epsilon=True)
    S = _S_grid(cfg, params)
    aset = build_average_set(model, n_nodes=int(cfg.n_nodes))
    z = model.m if cfg.z is None else cfg.z
    cols = []
    for side in (Side.PLAIN, Side.WRITER):
        b = hedging.band(side, S, cfg.t, z, cfg.epsilon, aset, model, params)
        cols += [np.broadcast_to(v, S.shape) for v in (b.y_star, b.lower, b.upper)]
    table = Table(BAND_COLUMNS)
    for i in range(S.size):
        table.add(S[i], *(c[i] for c in cols))
    _emit(table, cfg)
    return 0


def cmd_averages(cfg: RunConfig) -> int:
    problems: dict = {}
    _require(cfg, ("nu",), problems)
    if cfg.m is None and cfg.sigma_bar is None:
        problems["m"] = "give m or sigma_bar"
    if problems:
        raise ConfigError(problems)
    model = OUVolModel(m=cfg.resolved_m(), nu=cfg.nu, rho=cfg.rho)
    validate(MarketParams(0.0, 0.0, 1.0, 1.0, 1.0), model, warn=False)
    aset = build_average_set(model, n_nodes=int(cfg.n_nodes), closed_form_rtol=math.inf)
    closed = scott_closed_form(model.m, model.nu)
    table = Table(AVERAGES_COLUMNS)
    for name in AVERAGE_FIELDS:
        q = getattr(aset, name)
        c = closed.get(name)
        rel = None if c is None else (abs(q - c) / abs(c) if c != 0 else abs(q))
        table.add(name, q, c, rel)
    _emit(table, cfg)
    return 0


def cmd_verify(cfg: RunConfig) -> int:
    from .checks import CHECKS, run_checks

    keys = cfg.checks or list(CHECKS)
    unknown = [k for k in keys if k not in CHECKS]
    if unknown:
        raise ConfigError({"checks": f"unknown checks {unknown}; choose from {list(CHECKS)}"})
    results = []
    for key in keys:
        (res,) = run_checks([key])
        print(res.line(), file=sys.stderr, flush=True)
        results.append(res)
    # wall-clock times go to stderr only so the CSV stays reproducible
    table = Table(VERIFY_COLUMNS)
    for res in results:
        for q, v in res.details.items():
            if q.endswith("seconds"):
                continue
            table.add(res.key, res.passed, res.budget, q, v)
    _emit(table, cfg)
    failed = [r.key for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed" + (f"; failed: {', '.join(failed)}" if failed else ""), file=sys.stderr)
    return 1 if failed else 0


def cmd_simulate(cfg: RunConfig) -> int:
    params, model = _objects(cfg, need_epsilon=True)
    problems = {}
    if cfg.policy not in simulator.POLICIES:
        problems["policy"] = f"choose from {simulator.POLICIES}"
    n_steps = cfg.n_steps
    if n_steps is None:
        # resolve the fast driver with dt = eps/10
        n_steps = max(1, math.ceil(10 * (params.T - cfg.t) / cfg.epsilon))
    try:
        sim_cfg = simulator.SimConfig(
            n_paths=int(cfg.n_paths), n_steps=int(n_steps), seed=int(cfg.seed),
            rebalance_every=int(cfg.rebalance_every), policy=cfg.policy, kappa=cfg.kappa,
            S0=params.K if cfg.S0 is None else cfg.S0, z0=cfg.z, t0=cfg.t,
        )
    except ValueError as exc:
        problems["simulation"] = str(exc)
    if problems:
        raise ConfigError(problems)
    aset = build_average_set(model, n_nodes=int(cfg.n_nodes))
    try:
        res = simulator.run(sim_cfg, cfg.epsilon, aset, model, params)
    except ValueError as exc:
        raise ConfigError({"n_steps": str(exc)})
    table = Table(SIM_COLUMNS)
    for row in res.rows():
        table.add(*(row[c] for c in SIM_COLUMNS))
    _emit(table, cfg)
    return 0


def cmd_figures(cfg: RunConfig) -> int:
    if cfg.nu is None:
        raise ConfigError({"nu": "required (the figure sets do not fix it)"})
    names = list(figures.FIGURE_SETS) if cfg.set in (None, "all") else [cfg.set]
    for n in names:
        if n not in figures.FIGURE_SETS:
            raise ConfigError({"set": f"choose from {list(figures.FIGURE_SETS)} or 'all'"})
    if cfg.c6_method not in ("printed", "pde"):
        raise ConfigError({"c6_method": "must be 'printed' or 'pde'"})
    if not cfg.nu >= 0:
        raise ConfigError({"nu": "nu must be non-negative"})
    outdir = cfg.outdir or os.environ.get(OUTPUT_DIR_ENV) or "."
    os.makedirs(outdir, exist_ok=True)
    for n in names:
        for stem, table in figures.build(n, cfg.nu, cfg.m, c6_method=cfg.c6_method).items():
            path = os.path.join(outdir, f"{stem}.csv")
            table.to_csv(path)
            print(path)
    return 0


COMMANDS = {
    "price": cmd_price,
    "band": cmd_band,
    "averages": cmd_averages,
    "verify": cmd_verify,
    "simulate": cmd_simulate,
    "figures": cmd_figures,
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with RunConfig fields")
    g = p.add_argument_group("model")
    for name in ("r", "alpha", "gamma", "K", "T", "m", "nu", "rho", "epsilon", "t", "z"):
        g.add_argument(f"--{name}", type=float, default=None)
    g.add_argument("--sigma-bar", dest="sigma_bar", type=float, default=None, help="sets m = ln(sigma_bar) - nu^2")
    g.add_argument("--n-nodes", dest="n_nodes", type=int, default=None, help="Gauss-Hermite nodes")
    p.add_argument("-o", "--output", default=None, help="CSV file (default stdout)")


def _add_grid(p: argparse.ArgumentParser) -> None:
    p.add_argument("--S-min", dest="S_min", type=float, default=None)
    p.add_argument("--S-max", dest="S_max", type=float, default=None)
    p.add_argument("--n-S", dest="n_S", type=int, default=None)
    p.add_argument("--set", choices=sorted(figures.FIGURE_SETS), default=None, help="start from a figure parameter set")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svtc", description="Asymptotic option pricing and hedging bands under fast mean-reverting volatility with transaction costs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("price", help="corrected call price over an S grid")
    _add_common(p)
    _add_grid(p)
    p.add_argument("--c6-method", dest="c6_method", choices=("printed", "pde"), default=None)

    p = sub.add_parser("band", help="hedge centre and no-transaction band for both sides")
    _add_common(p)
    _add_grid(p)

    p = sub.add_parser("averages", help="invariant-measure averages, quadrature vs closed form")
    _add_common(p)

    p = sub.add_parser("verify", help="run the acceptance checks; exit 1 on any failure")
    _add_common(p)
    p.add_argument("--only", dest="checks", nargs="+", default=None, help="subset of check names")

    p = sub.add_parser("simulate", help="Monte Carlo of hedged terminal wealth")
    _add_common(p)
    p.add_argument("--set", choices=sorted(figures.FIGURE_SETS), default=None)
    p.add_argument("--n-paths", dest="n_paths", type=int, default=None)
    p.add_argument("--n-steps", dest="n_steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--rebalance-every", dest="rebalance_every", type=int, default=None)
    p.add_argument("--policy", choices=simulator.POLICIES, default=None)
    p.add_argument("--kappa", type=float, default=None, help="band scale for scaled_band")
    p.add_argument("--S0", type=float, default=None)

    p = sub.add_parser("figures", help="write the figure tables as CSV files")
    p.add_argument("--config", help="JSON file with RunConfig fields")
    p.add_argument("--set", choices=sorted(figures.FIGURE_SETS) + ["all"], default=None)
    p.add_argument("--nu", type=float, default=None)
    p.add_argument("--m", type=float, default=None, help="default: ln(sigma_bar) - nu^2 from the set")
    p.add_argument("--c6-method", dest="c6_method", choices=("printed", "pde"), default=None)
    p.add_argument("--outdir", default=None, help=f"default ${OUTPUT_DIR_ENV} or .")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _merge(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        for k, v in exc.problems.items():
            print(f"config error: {k}: {v}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
