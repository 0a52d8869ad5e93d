"""Acceptance checks shared by ``svtc verify`` and the test suite.

Each check measures its quantities, compares them against a fixed
tolerance and returns a :class:`CheckResult`; nothing is loosened when a
comparison fails.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import binom

from . import expansion, hedging, simulator
from .bs_kernel import bs_derivatives, bs_price
from .model import MarketParams, OUVolModel, Side
from .ou_calculus import (
    AVERAGE_FIELDS,
    InvariantMeasure,
    average,
    build_average_set,
    scott_closed_form,
    solve_poisson,
)
from .verification import (
    GridFunction1D,
    apply_operator,
    c6_tilde_pde,
    numeric_source_c6,
    refinement_order,
    solve_bs_with_source,
)

__all__ = ["CheckResult", "CHECKS", "run_checks", "FIG3", "fig3_model"]

# 40-digit evaluation of S N(d1) - K exp(-r tau) N(d2) at S = K = 100,
# r = 0.04, sigma = 0.165, tau = 3 (mpmath, erfc based)
BS_ATM_REFERENCE = 17.29784440689796483806808

FIG3 = MarketParams(r=0.04, alpha=0.1, gamma=1.0, K=100.0, T=3.0)
FIG3_SIGMA_BAR = 0.165
FIG3_EPS = 1 / 200
CHECK_NU = 0.5


def fig3_model(rho: float, nu: float = CHECK_NU) -> OUVolModel:
    return OUVolModel(m=math.log(FIG3_SIGMA_BAR) - nu**2, nu=nu, rho=rho)


@dataclass
class CheckResult:
    key: str
    title: str
    passed: bool
    seconds: float
    budget: float
    details: dict = field(default_factory=dict)

    @property
    def in_budget(self) -> bool:
        return self.seconds <= self.budget

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        shown = ", ".join(f"{k}={_short(v)}" for k, v in self.details.items())
        return f"[{status}] {self.key} {self.title} ({self.seconds:.2f}s / {self.budget:g}s): {shown}"


def _short(v):
    if isinstance(v, float):
        return f"{v:.3e}"
    return str(v)


def _timed(fn: Callable[[], tuple[bool, dict]], key: str, title: str, budget: float) -> CheckResult:
    t0 = time.perf_counter()
    ok, details = fn()
    sec = time.perf_counter() - t0
    return CheckResult(key, title, bool(ok) and sec <= budget, sec, budget, details)


def _erfc_call(S, K, r, sigma, tau):
    v = sigma * math.sqrt(tau)
    d1 = (math.log(S / K) + (r + 0.5 * sigma**2) * tau) / v
    cdf = lambda x: 0.5 * math.erfc(-x / math.sqrt(2.0))  # noqa: E731
    return S * cdf(d1) - K * math.exp(-r * tau) * cdf(d1 - v)


def check_bs_price() -> CheckResult:
    def body():
        price = float(bs_price(100.0, 0.0, FIG3_SIGMA_BAR, FIG3).price)
        rel = abs(price - BS_ATM_REFERENCE) / BS_ATM_REFERENCE
        rel_erfc = abs(price - _erfc_call(100.0, 100.0, 0.04, FIG3_SIGMA_BAR, 3.0)) / BS_ATM_REFERENCE
        times = []
        for _ in range(50):
            t0 = time.perf_counter()
            bs_price(100.0, 0.0, FIG3_SIGMA_BAR, FIG3)
            times.append(time.perf_counter() - t0)
        call_time = float(np.median(times))
        ok = rel <= 1e-8 and rel_erfc <= 1e-8 and call_time < 1e-3
        return ok, {"price": price, "rel_err": rel, "rel_err_erfc": rel_erfc, "call_seconds": call_time}

    return _timed(body, "bs_price", "call price vs 40-digit reference", 1.0)


def _central_difference(fn, S, n, h):
    k = np.arange(n + 1)
    coef = (-1.0) ** k * binom(n, k)
    return sum(c * fn(S + (n / 2 - j) * h) for c, j in zip(coef, k)) / h**n


def greek_fd_errors(params=FIG3, sigma_bar=FIG3_SIGMA_BAR, n_points=50) -> dict:
    """Normwise relative error of the analytic derivatives vs Richardson-extrapolated differences."""
    S = np.linspace(0.2 * params.K, 3 * params.K, n_points)
    exact = bs_derivatives(S, 0.0, sigma_bar, params, 6).dS
    price = lambda s: bs_price(s, 0.0, sigma_bar, params).price  # noqa: E731
    eps = np.finfo(float).eps
    out = {}
    for n in range(1, 7):
        h = S * eps ** (1.0 / (n + 2))
        d1, d2, d4 = (_central_difference(price, S, n, c * h) for c in (1, 2, 4))
        r1, r2 = (4 * d1 - d2) / 3, (4 * d2 - d4) / 3
        fd = (16 * r1 - r2) / 15
        out[n] = float(np.max(np.abs(fd - exact[n])) / np.max(np.abs(exact[n])))
    return out


def check_greeks() -> CheckResult:
    def body():
        errs = greek_fd_errors()
        return max(errs.values()) <= 1e-5, {f"rel_err_{n}": e for n, e in errs.items()}

    return _timed(body, "greeks", "orders 1-6 vs finite differences", 1.0)


def l0_refinement(m=0.0, nu=0.5, grids=(401, 801)) -> list[float]:
    """Max-norm residual of the discrete L0 applied to phi on its own grid."""
    model = OUVolModel(m=m, nu=nu, rho=0.0)
    meas = InvariantMeasure.of(model)
    s2 = average(lambda z: np.exp(2 * z), meas)
    src = lambda z: np.exp(2 * z) - s2  # noqa: E731
    errs = []
    for n in grids:
        sol = solve_poisson(src, meas, source_id="phi", n_grid=n)
        res = apply_operator("L0", GridFunction1D(sol.grid, sol.chi), model, None)
        errs.append(float(np.max(np.abs(res.values - src(res.axis)))))
    return errs


def check_ou() -> CheckResult:
    def body():
        worst = 0.0
        cs = []
        for m in (-2.0, 0.0):
            for nu in (0.1, 0.5):
                model = OUVolModel(m=m, nu=nu, rho=0.0)
                aset = build_average_set(model, closed_form_rtol=np.inf)
                closed = scott_closed_form(m, nu)
                for name in AVERAGE_FIELDS:
                    if name in closed:
                        q = getattr(aset, name)
                        worst = max(worst, abs(q - closed[name]) / max(abs(closed[name]), 1e-300))
                cs.append(aset.sigma_bar_sq * aset.inv_tau_sq)
        bounded = OUVolModel(m=0.0, nu=0.7, rho=0.0, f=lambda z: 0.2 + 0.1 * np.tanh(z), f_bounds=(0.1, 0.3))
        meas = InvariantMeasure.of(bounded)
        cs.append(average(lambda z: bounded.vol(z) ** 2, meas) * average(lambda z: bounded.vol(z) ** -2, meas))
        e1, e2 = l0_refinement()
        ratio = e1 / e2
        ok = worst <= 1e-8 and min(cs) >= 1.0 and 3.0 <= ratio <= 5.0
        return ok, {"closed_vs_quad": worst, "min_cauchy_schwarz": min(cs), "l0_err_coarse": e1, "l0_err_fine": e2, "l0_ratio": ratio}

    return _timed(body, "ou_calculus", "closed forms, Cauchy-Schwarz, L0 residual order", 5.0)


def _random_draws(rng, n):
    return [
        dict(
            S=rng.uniform(0.2, 150.0),
            t=rng.uniform(0.0, 0.9),
            z=rng.uniform(-3.0, -0.5),
            r=rng.uniform(0.0, 0.08),
            excess=rng.uniform(0.01, 0.1),
            gamma=rng.uniform(0.2, 3.0),
            nu=float(rng.choice([0.25, 0.5, 1.0, 1.5])),
            eps=rng.uniform(1e-3, 0.05),
        )
        for _ in range(n)
    ]


def _draw_objects(d):
    params = MarketParams(r=d["r"], alpha=d["r"] + d["excess"], gamma=d["gamma"], K=100.0, T=1.0)
    model = OUVolModel(m=-1.8, nu=d["nu"], rho=-0.3)
    return params, model


_AVG_CACHE: dict = {}


def _draw_averages(model):
    # the writer centre only needs sigma_bar, which depends on (m, nu)
    key = (model.m, model.nu)
    if key not in _AVG_CACHE:
        _AVG_CACHE[key] = build_average_set(model)
    return _AVG_CACHE[key]


def check_band() -> CheckResult:
    # averages are set-up work, built before the clock starts
    draws = _random_draws(np.random.default_rng(20240611), 20)
    for d in draws:
        _draw_averages(_draw_objects(d)[1])

    def body():
        generic_vs_scott = 0.0
        asymmetric = 0
        scaling = 0.0
        same_width = True
        for d in draws:
            params, model = _draw_objects(d)
            aset = _draw_averages(model)
            widths = []
            for side in (Side.PLAIN, Side.WRITER):
                b = hedging.band(side, d["S"], d["t"], d["z"], d["eps"], aset, model, params)
                ref = hedging.band_half_width_scott(d["S"], d["t"], d["z"], d["eps"], model, params)
                generic_vs_scott = max(generic_vs_scott, abs(b.half_width - ref) / ref)
                if not (b.upper == b.y_star + b.half_width and b.lower == b.y_star - b.half_width):
                    asymmetric += 1
                widths.append(b.half_width)
            same_width = same_width and widths[0] == widths[1]
            w1 = hedging.band(Side.PLAIN, d["S"], d["t"], d["z"], 1 / 200, None, model, params).half_width
            w2 = hedging.band(Side.PLAIN, d["S"], d["t"], d["z"], 1 / 800, None, model, params).half_width
            a, b_ = w1 / np.cbrt(1 / 200), w2 / np.cbrt(1 / 800)
            scaling = max(scaling, abs(a - b_) / a)
        ok = generic_vs_scott <= 1e-12 and asymmetric == 0 and scaling <= 1e-12 and same_width
        return ok, {"generic_vs_scott": generic_vs_scott, "asymmetric_bands": asymmetric, "eps_scaling": scaling, "equal_side_widths": same_width}

    return _timed(body, "band", "generic vs exponential-vol band, symmetry, eps^(1/3) law", 1.0)


def check_inner_profile() -> CheckResult:
    def body():
        rng = np.random.default_rng(7)
        grad, curv = 0.0, 0.0
        for d in _random_draws(rng, 20):
            params, model = _draw_objects(d)
            ip = hedging.inner_profile(d["S"], d["t"], d["z"], model, params)
            Yp = ip.Y_plus
            grad = max(grad, abs(ip.dY(Yp) + d["S"]) / d["S"], abs(ip.dY(-Yp) - d["S"]) / d["S"])
            curv = max(curv, abs(ip.dYY(Yp)) / abs(ip.B), abs(ip.dYY(-Yp)) / abs(ip.B))
        return grad <= 1e-10 and curv <= 1e-10, {"gradient_rel": grad, "curvature_rel": curv}

    return _timed(body, "inner_profile", "gradient and smooth pasting at the band edges", 1.0)


def c3_source(averages, model, params):
    def src(S, t):
        g = bs_derivatives(S, t, averages.sigma_bar, params, 3).dS
        q = averages.a_fphi * (S**3 * g[3] + 2 * S**2 * g[2]) - params.excess_return * averages.a_phif * S**2 * g[2]
        return model.nu * model.rho / math.sqrt(2.0) * q

    return src


def check_c3() -> CheckResult:
    def body():
        model = fig3_model(-0.2)
        aset = build_average_set(model)
        errs = []
        for n_S, n_t in ((801, 400), (1601, 800)):
            sol = solve_bs_with_source(c3_source(aset, model, FIG3), aset.sigma_bar, FIG3, n_S=n_S, n_t=n_t)
            closed = expansion.c3(sol.x, 0.0, aset, model, FIG3)
            errs.append(float(np.max(np.abs(sol.at(0) - closed)) / np.max(np.abs(closed))))
        ratio = errs[0] / errs[1]
        Sg, tg = np.meshgrid(np.linspace(50, 150, 10), np.linspace(0, 2.9, 10), indexing="ij")
        c3 = expansion.c3(Sg, tg, aset, model, FIG3)
        diff = expansion.u3(Side.PLAIN, Sg, tg, aset, model, FIG3) - expansion.u3(Side.WRITER, Sg, tg, aset, model, FIG3)
        side_rel = float(np.max(np.abs(diff - c3)) / np.max(np.abs(c3)))
        zero = float(np.max(np.abs(expansion.c3(Sg, tg, aset, fig3_model(0.0), FIG3))))
        ok = errs[0] <= 5e-3 and 3.0 <= ratio <= 5.0 and side_rel <= 1e-10 and zero == 0.0
        return ok, {"pde_rel_baseline": errs[0], "pde_rel_refined": errs[1], "refine_ratio": ratio, "order": refinement_order(*errs), "side_identity": side_rel, "max_abs_at_rho0": zero}

    return _timed(body, "c3", "closed form vs PDE solve, side identity, rho = 0", 30.0)


def check_c6_pde() -> CheckResult:
    def body():
        model = fig3_model(-0.2)
        aset = build_average_set(model)
        S = np.exp(np.linspace(math.log(FIG3.K / 8), math.log(8 * FIG3.K), 801))[1:-1]
        pde = c6_tilde_pde(S, 0.0, aset, model, FIG3)
        _, printed = expansion.c6(S, 0.0, model.m, aset, model, FIG3)
        rel = float(np.max(np.abs(printed - pde)) / np.max(np.abs(pde)))
        rel_flipped = float(np.max(np.abs(-printed - pde)) / np.max(np.abs(pde)))
        i = int(np.argmin(np.abs(S - FIG3.K)))
        return rel <= 5e-3, {"rel_dev": rel, "rel_dev_sign_flipped": rel_flipped, "printed_at_K": float(printed[i]), "pde_at_K": float(pde[i])}

    return _timed(body, "c6_tilde", "cubic-in-tau formula vs PDE solve", 120.0)


def check_c6_rho0() -> CheckResult:
    def body():
        model = fig3_model(0.0)
        aset = build_average_set(model)
        Sg, tg = np.meshgrid(np.linspace(20, 300, 30), np.linspace(0, 2.9, 10), indexing="ij")
        co = expansion.c6_source_coeffs(Sg, tg, aset, model, FIG3)
        a, b = float(np.max(np.abs(co.A_hat))), float(np.max(np.abs(co.B_hat)))
        return a == 0.0 and b == 0.0, {"max_abs_A_hat": a, "max_abs_B_hat": b}

    return _timed(body, "c6_source_rho0", "A_hat = B_hat = 0 at rho = 0", 10.0)


def check_c6_numeric_source() -> CheckResult:
    def body():
        aset = build_average_set(fig3_model(-0.2))
        details = {}
        ok = True
        S = np.linspace(50, 150, 21)
        for rho in (-0.2, 0.0):
            for t in (0.0, 2.0):
                _, rep = numeric_source_c6(S, t, aset, fig3_model(rho), FIG3)
                details[f"rel_rho{rho:g}_t{t:g}"] = rep.rel_max
                details[f"solv_rho{rho:g}_t{t:g}"] = rep.details["u9_solvability"]
                ok = ok and bool(rep.passed)
        return ok, details

    return _timed(body, "c6_numeric_source", "source rebuilt from its definition vs printed source", 60.0)


def check_expansion_order() -> CheckResult:
    model = fig3_model(-0.2)
    aset = build_average_set(model)

    def body():
        gaps = []
        for eps in (1 / 200, 1 / 800):
            pe = expansion.price(FIG3.K, 0.0, model.m, eps, aset, model, FIG3)
            gaps.append(abs(float(pe.total - pe.c0 - math.sqrt(eps) * pe.c3)))
        ratio = gaps[0] / gaps[1]
        return 3.5 <= ratio <= 4.5, {"gap_1/200": gaps[0], "gap_1/800": gaps[1], "ratio": ratio}

    return _timed(body, "expansion_order", "remainder after C3 scales like eps", 1.0)


def check_simulator() -> CheckResult:
    def body():
        fig1 = MarketParams(r=0.07, alpha=0.1, gamma=1.0, K=0.5, T=0.3)
        small_model = OUVolModel(m=math.log(0.2) - 0.25, nu=0.5, rho=-0.2)
        small_avg = build_average_set(small_model)
        cfg = simulator.SimConfig(n_paths=3000, n_steps=600, seed=11, policy="band", S0=0.5, block_size=1024)
        r1 = simulator.run(cfg, 1 / 200, small_avg, small_model, fig1, keep_paths=True)
        r2 = simulator.run(cfg, 1 / 200, small_avg, small_model, fig1, keep_paths=True)
        same = all(np.array_equal(r1.terminal[s]["wealth"], r2.terminal[s]["wealth"]) for s in (Side.PLAIN, Side.WRITER))
        same = same and r1.sides == r2.sides

        flat = MarketParams(r=0.04, alpha=0.04, gamma=1.0, K=100.0, T=3.0)
        frozen = OUVolModel(m=math.log(FIG3_SIGMA_BAR), nu=0.0, rho=0.0)
        mcfg = simulator.SimConfig(n_paths=100_000, n_steps=50, seed=3, policy="none", S0=100.0)
        mr = simulator.run(mcfg, FIG3_EPS, build_average_set(frozen), frozen, flat)
        mart = abs(mr.disc_S_mean - 100.0) / mr.disc_S_se

        model = fig3_model(-0.2)
        aset = build_average_set(model)
        base = dict(n_paths=20_000, n_steps=6000, seed=5, rebalance_every=10, S0=100.0)
        hedged = simulator.run(simulator.SimConfig(policy="band", **base), FIG3_EPS, aset, model, FIG3)
        naked = simulator.run(simulator.SimConfig(policy="none", **base), FIG3_EPS, aset, model, FIG3)
        ratio = hedged.sides[Side.WRITER].wealth_std / naked.sides[Side.WRITER].wealth_std
        ok = same and mart <= 3.0 and ratio <= 0.5
        return ok, {"bit_identical": same, "martingale_z": mart, "writer_std_ratio": ratio}

    return _timed(body, "simulator", "determinism, martingale, hedged vs unhedged spread", 120.0)


def check_figures(nu: float = CHECK_NU) -> CheckResult:
    from . import figures

    def body():
        details = {}
        ok = True
        for name in ("fig1", "fig2"):
            tab = figures.build(name, nu)[name]
            vol, S = tab.column("vol"), tab.column("S")
            y, lo, hi = tab.column("y_star"), tab.column("lower"), tab.column("upper")
            width_ok = bool(np.all(hi - lo > 0))
            details[f"{name}_positive_width"] = width_ok
            ok = ok and width_ok
            if name == "fig1":
                dec = all(
                    np.all(np.diff(c[vol == v]) < 0) for v in np.unique(vol) for c in (y, lo, hi)
                ) and all(np.all(np.diff(S[vol == v]) > 0) for v in np.unique(vol))
                details["fig1_decreasing"] = bool(dec)
                ok = ok and dec
        tabs = figures.build("fig3", nu)
        a, b = tabs["fig3a"], tabs["fig3b"]
        K = figures.FIGURE_SETS["fig3"].K
        eps = figures.FIGURE_SETS["fig3"].epsilon
        c3_gap_a = float(np.max(np.abs(a.column("C_with_C3") - a.column("C_BS"))))
        c6_gap_a = float(np.max(np.abs(a.column("C_with_C3_and_C6") - a.column("C_BS"))))
        c3_gap_b = float(np.max(np.abs(b.column("C_with_C3") - b.column("C_BS"))))
        i = int(np.argmin(np.abs(b.column("S") - K)))
        details.update(
            fig3a_c3_gap=c3_gap_a,
            fig3a_total_gap_over_epsK=c6_gap_a / (eps * K),
            fig3b_c3_gap_over_sqrt_epsK=c3_gap_b / (math.sqrt(eps) * K),
            fig3b_c3_shift_at_K=float(b.column("C_with_C3")[i] - b.column("C_BS")[i]),
            fig3b_total_shift_at_K=float(b.column("C_with_C3_and_C6")[i] - b.column("C_BS")[i]),
        )
        scale_ok = c3_gap_a == 0.0 and 0 < c6_gap_a <= eps * K and 0 < c3_gap_b <= math.sqrt(eps) * K
        return ok and scale_ok, details

    return _timed(body, "figures", "figure tables and qualitative gates", 10.0)


CHECKS: dict[str, Callable[[], CheckResult]] = {
    "bs_price": check_bs_price,
    "greeks": check_greeks,
    "ou_calculus": check_ou,
    "band": check_band,
    "inner_profile": check_inner_profile,
    "c3": check_c3,
    "c6_tilde": check_c6_pde,
    "c6_source_rho0": check_c6_rho0,
    "c6_numeric_source": check_c6_numeric_source,
    "expansion_order": check_expansion_order,
    "simulator": check_simulator,
    "figures": check_figures,
}


def run_checks(keys=None) -> list[CheckResult]:
    keys = list(CHECKS) if keys is None else list(keys)
    unknown = [k for k in keys if k not in CHECKS]
    if unknown:
        raise KeyError(f"unknown checks: {unknown}")
    return [CHECKS[k]() for k in keys]
