"""Independent numerical oracles for the closed-form objects.

* ``apply_operator``: second-order central differences for L0, L1, L2, N_L.
* ``solve_bs_with_source``: Crank-Nicolson (Rannacher start) solver for
  ``<L2> u = g`` backward from expiry on a log-spaced spot grid.
* ``numeric_source_c6``: rebuilds the source of the C6 equation from its
  definition (numerical L0 inversion for U9, finite differences in S and t,
  quadrature in z) without using the printed coefficients.
* ``residual``: max / L2 residual of an operator equation with an order
  estimate from grid refinement.
"""
from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import solve_banded

from . import expansion
from .bs_kernel import bs_derivatives
from .model import MarketParams, OUVolModel, Side, discount_factor
from .ou_calculus import AverageSet, InvariantMeasure, flux_stencil

__all__ = [
    "GridFunction1D",
    "GridFunction2D",
    "ResidualReport",
    "apply_operator",
    "solve_bs_with_source",
    "numeric_source_c6",
    "residual",
    "refinement_order",
]

OPERATORS = ("L0", "L1", "L2", "NL", "L2_averaged")


@dataclass(frozen=True)
class GridFunction1D:
    axis: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.axis) <= 0):
            raise ValueError("axis must be strictly increasing")


@dataclass(frozen=True)
class GridFunction2D:
    """``values[i, j]`` sampled at ``(x[i], y[j])``; for L2 ``x`` is S and ``y`` is t."""

    x: np.ndarray
    y: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.x) <= 0) or np.any(np.diff(self.y) <= 0):
            raise ValueError("axes must be strictly increasing")
        if self.values.shape != (self.x.size, self.y.size):
            raise ValueError("values shape does not match axes")

    def at(self, j: int) -> np.ndarray:
        return self.values[:, j]


@dataclass
class ResidualReport:
    name: str
    max_abs: float
    l2: float
    spacings: tuple = ()
    order: Optional[float] = None
    rel_max: Optional[float] = None
    passed: Optional[bool] = None
    details: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        row = {
            "name": self.name,
            "max_abs": self.max_abs,
            "l2": self.l2,
            "rel_max": self.rel_max,
            "order": self.order,
            "passed": self.passed,
        }
        row.update(self.details)
        return row

    def to_text(self) -> str:
        order = "n/a" if self.order is None else f"{self.order:.3f}"
        rel = "n/a" if self.rel_max is None else f"{self.rel_max:.3e}"
        status = {None: "INFO", True: "PASS", False: "FAIL"}[self.passed]
        return f"[{status}] {self.name}: max={self.max_abs:.3e} l2={self.l2:.3e} rel={rel} order={order}"


def write_reports_csv(reports: Sequence[ResidualReport], fh) -> None:
    cols = ["name", "max_abs", "l2", "rel_max", "order", "passed"]
    wr = csv.writer(fh)
    wr.writerow(cols)
    for rep in reports:
        row = rep.as_row()
        wr.writerow([_fmt(row[c]) for c in cols])


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return f"{v:.12g}"
    return str(v)


def refinement_order(err_coarse: float, err_fine: float, ratio: float = 2.0) -> float:
    return math.log(err_coarse / err_fine) / math.log(ratio)


# --------------------------------------------------------------------------
# discrete operators


def _uniform_step(axis: np.ndarray) -> float:
    h = np.diff(axis)
    if not np.allclose(h, h[0], rtol=1e-9, atol=0):
        raise ValueError("operator stencils need a uniform axis")
    return float(h[0])


def _nonuniform_derivs(u, x, axis):
    """First and second derivatives on a non-uniform axis (three-point)."""
    u = np.moveaxis(u, axis, 0)
    h0 = (x[1:-1] - x[:-2]).reshape((-1,) + (1,) * (u.ndim - 1))
    h1 = (x[2:] - x[1:-1]).reshape((-1,) + (1,) * (u.ndim - 1))
    um, uc, up = u[:-2], u[1:-1], u[2:]
    d1 = (-h1 / (h0 * (h0 + h1))) * um + ((h1 - h0) / (h0 * h1)) * uc + (h0 / (h1 * (h0 + h1))) * up
    d2 = 2 * (um / (h0 * (h0 + h1)) - uc / (h0 * h1) + up / (h1 * (h0 + h1)))
    return np.moveaxis(d1, 0, axis), np.moveaxis(d2, 0, axis)


def apply_operator(op_id: str, u, model: OUVolModel, params: MarketParams, *, sigma_bar: Optional[float] = None):
    """Apply a model operator to grid data; results live on interior nodes.

    ``L0``/``NL``: ``u`` is a :class:`GridFunction1D` on a uniform z axis
    (``NL`` also needs ``u`` to carry a single time via ``sigma_bar``-free
    ``params``; ``delta`` is taken at ``t = 0``).
    ``L1``: ``GridFunction2D`` over ``(S, z)``.
    ``L2``: ``GridFunction2D`` over ``(S, t)``, with ``f`` frozen at
    ``sigma_bar`` (so ``L2_averaged`` when ``sigma_bar = <f^2>**0.5``).
    """
    if op_id not in OPERATORS:
        raise ValueError(f"unknown operator {op_id!r}")
    if op_id in ("L0", "NL"):
        if not isinstance(u, GridFunction1D):
            raise ValueError(f"{op_id} acts on functions of z (GridFunction1D)")
        z = u.axis
        h = _uniform_step(z)
        uz = (u.values[2:] - u.values[:-2]) / (2 * h)
        if op_id == "L0":
            uzz = (u.values[2:] - 2 * u.values[1:-1] + u.values[:-2]) / (h * h)
            return GridFunction1D(z[1:-1], (model.m - z[1:-1]) * uz + model.nu**2 * uzz)
        delta = discount_factor(0.0, params)
        return GridFunction1D(z[1:-1], -model.nu**2 * (params.gamma / delta) * uz**2)

    if not isinstance(u, GridFunction2D):
        raise ValueError(f"{op_id} acts on two-variable grid data (GridFunction2D)")
    if op_id == "L1":
        S, z = u.x, u.y
        hz = _uniform_step(z)
        v = u.values
        u_z = (v[:, 2:] - v[:, :-2]) / (2 * hz)
        u_Sz, _ = _nonuniform_derivs(u_z, S, 0)
        u_z = u_z[1:-1]
        Si, zi = S[1:-1, None], z[None, 1:-1]
        fz = model.vol(zi)
        rt2 = math.sqrt(2.0)
        out = -model.nu * rt2 * model.rho * params.excess_return / fz * u_z + model.nu * rt2 * fz * Si * model.rho * u_Sz
        return GridFunction2D(S[1:-1], z[1:-1], out)

    # L2 / L2_averaged over (S, t)
    if sigma_bar is None:
        raise ValueError("L2 on (S, t) data needs the frozen volatility sigma_bar")
    S, t = u.x, u.y
    v = u.values
    u_S, u_SS = _nonuniform_derivs(v, S, 0)
    u_t, _ = _nonuniform_derivs(v, t, 1)
    u_S, u_SS = u_S[:, 1:-1], u_SS[:, 1:-1]
    u_t = u_t[1:-1]
    vi = v[1:-1, 1:-1]
    Si = S[1:-1, None]
    out = u_t + 0.5 * sigma_bar**2 * Si**2 * u_SS - params.r * vi + params.r * Si * u_S
    return GridFunction2D(S[1:-1], t[1:-1], out)


def residual(
    name: str,
    u: Callable,
    op_id: str,
    source: Callable,
    model: OUVolModel,
    params: MarketParams,
    grids: Sequence,
    *,
    sigma_bar: Optional[float] = None,
    scale: Optional[float] = None,
) -> ResidualReport:
    """Residual ``op(u) - source`` on one or more grids.

    ``grids`` holds axis tuples (``(z,)`` for L0/NL, ``(S, t)`` or ``(S, z)``
    otherwise).  With two grids, the second being a 2x refinement, the
    order is estimated from the max-norm residuals.
    """
    errs, l2s, hs = [], [], []
    for axes in grids:
        if op_id in ("L0", "NL"):
            (z,) = axes
            gf = GridFunction1D(z, np.asarray(u(z), dtype=float))
            res = apply_operator(op_id, gf, model, params)
            diff = res.values - source(res.axis)
            hs.append(float(z[1] - z[0]))
        else:
            x, y = axes
            X, Y = np.meshgrid(x, y, indexing="ij")
            gf = GridFunction2D(x, y, np.asarray(u(X, Y), dtype=float))
            res = apply_operator(op_id, gf, model, params, sigma_bar=sigma_bar)
            Xi, Yi = np.meshgrid(res.x, res.y, indexing="ij")
            diff = res.values - source(Xi, Yi)
            hs.append(float(np.max(np.diff(x))))
        errs.append(float(np.max(np.abs(diff))))
        l2s.append(float(np.sqrt(np.mean(diff**2))))
    order = refinement_order(errs[-2], errs[-1]) if len(errs) >= 2 and errs[-1] > 0 else None
    rel = errs[-1] / scale if scale else None
    return ResidualReport(name, errs[-1], l2s[-1], tuple(hs), order, rel, details={"errors": tuple(errs)})


# --------------------------------------------------------------------------
# Black-Scholes with source


def _time_mesh(T: float, n_t: int, grading: float) -> np.ndarray:
    """Times-to-expiry ``0 = tau_0 < ... < tau_N = T`` clustered near expiry."""
    k = np.linspace(0.0, 1.0, n_t + 1)
    return T * k**grading


def solve_bs_with_source(
    source: Callable,
    sigma_bar: float,
    params: MarketParams,
    final_data: Optional[Callable] = None,
    *,
    n_S: int = 801,
    n_t: int = 400,
    S_range: Optional[tuple[float, float]] = None,
    grading: float = 2.0,
    rannacher_steps: int = 2,
    boundary: Optional[tuple[Callable, Callable]] = None,
    t_out: Optional[Sequence[float]] = None,
    cell_points: int = 4,
) -> GridFunction2D:
    """Solve ``u_t + 1/2 sigma^2 S^2 u_SS + r S u_S - r u = source(S, t)``.

    Backward from ``u(S, T) = final_data(S)`` on a log-uniform S grid over
    ``S_range`` (default ``[K/8, 8K]``), Dirichlet data from ``boundary``
    (default zero).  The source is only evaluated strictly before expiry
    (at step midpoints), so sources that blow up at ``t = T`` are usable.
    Each node sees the source averaged over its log-spot cell with a
    ``cell_points`` Gauss-Legendre rule; point sampling would make sources
    concentrating at the strike near expiry non-integrable on the node
    ``S = K``.  Returns the solution at the times ``t_out`` (default ``[0, T]``).
    """
    K, T, r = params.K, params.T, params.r
    lo, hi = S_range if S_range is not None else (K / 8.0, 8.0 * K)
    x = np.linspace(math.log(lo), math.log(hi), n_S)
    S = np.exp(x)
    dx = x[1] - x[0]
    s2 = sigma_bar**2
    # A u = a u_xx + b u_x - r u
    a, b = 0.5 * s2, r - 0.5 * s2
    lower = a / dx**2 - b / (2 * dx)
    diag = -2 * a / dx**2 - r
    upper = a / dx**2 + b / (2 * dx)

    taus = _time_mesh(T, n_t, grading)
    if t_out is None:
        t_out = [0.0, T]
    t_out = sorted(float(v) for v in t_out)
    want_tau = sorted({T - v for v in t_out})

    u = np.zeros(n_S) if final_data is None else np.asarray(final_data(S), dtype=float).copy()
    bl, bu = boundary if boundary is not None else (lambda S_, t_: 0.0, lambda S_, t_: 0.0)

    # split the first steps into implicit half-steps (Rannacher smoothing)
    steps = []
    for n in range(n_t):
        t0, t1 = taus[n], taus[n + 1]
        if n < rannacher_steps:
            mid = 0.5 * (t0 + t1)
            steps += [(t0, mid, 1.0), (mid, t1, 1.0)]
        else:
            steps.append((t0, t1, 0.5))
    # make sure requested output times are step boundaries
    for wt in want_tau:
        if 0 < wt < T and not any(abs(wt - s[1]) < 1e-14 for s in steps):
            raise ValueError("t_out must coincide with mesh times; use t_out within {0, T} or adjust n_t")

    saved = {}
    if 0.0 in want_tau or any(abs(w) < 1e-14 for w in want_tau):
        saved[0.0] = u.copy()
    inner = slice(1, -1)
    m = n_S - 2
    if cell_points > 1:
        gl_x, gl_w = np.polynomial.legendre.leggauss(cell_points)
        S_cell = np.exp(x[inner, None] + 0.5 * dx * gl_x[None, :])
        w_cell = 0.5 * gl_w
    else:
        S_cell, w_cell = S[inner, None], np.ones(1)

    def g_at(t_val):
        vals = np.asarray(source(S_cell.ravel(), t_val), dtype=float) * np.ones(S_cell.size)
        return vals.reshape(S_cell.shape) @ w_cell
    for tau0, tau1, theta in steps:
        dt = tau1 - tau0
        # u_tau = A u - g
        Au = np.zeros(n_S)
        Au[inner] = lower * u[:-2] + diag * u[1:-1] + upper * u[2:]
        tm = tau1 if theta == 1.0 else 0.5 * (tau0 + tau1)
        g = g_at(T - tm)
        rhs = u[inner] + (1 - theta) * dt * Au[inner] - dt * g
        new_lo, new_hi = bl(S[0], T - tau1), bu(S[-1], T - tau1)
        ab = np.zeros((3, m))
        ab[0, 1:] = -theta * dt * upper
        ab[1, :] = 1 - theta * dt * diag
        ab[2, :-1] = -theta * dt * lower
        rhs[0] += theta * dt * lower * new_lo
        rhs[-1] += theta * dt * upper * new_hi
        u_new = np.empty(n_S)
        u_new[inner] = solve_banded((1, 1), ab, rhs)
        u_new[0], u_new[-1] = new_lo, new_hi
        u = u_new
        for wt in want_tau:
            if abs(wt - tau1) < 1e-14:
                saved[wt] = u.copy()
    cols = [saved[min(saved, key=lambda k: abs(k - (T - tv)))] for tv in t_out]
    return GridFunction2D(S, np.asarray(t_out), np.column_stack(cols))


# --------------------------------------------------------------------------
# numerical reconstruction of the C6 source


def numeric_source_c6(
    S_grid,
    t: float,
    averages: AverageSet,
    model: OUVolModel,
    params: MarketParams,
    *,
    n_nodes: int = 96,
    rel_step: float = 2e-3,
    time_step: float = 1e-3,
    solvability_tol: float = 1e-7,
    rtol: float = 0.01,
) -> tuple[GridFunction1D, ResidualReport]:
    """Rebuild the right-hand side of the ``C6`` equation from its definition.

    For each investor side, ``U9`` solves ``L0 U9 = -(L2 U3 + L1 U6z)`` at
    every spot node; the S- and t-derivatives inside are central finite
    differences of the closed-form ``U3``/``U0`` and the z-dependence comes
    from the numerical Poisson solutions.  The four bracketed side
    differences are then averaged by Gauss-Hermite quadrature.  The report
    compares against ``tau^2 A_hat + tau B_hat + C_hat`` relative to the
    largest printed value on the grid.
    """
    S_grid = np.asarray(S_grid, dtype=float)
    if averages.solutions is None:
        raise ValueError("numeric_source_c6 needs Poisson solutions (nu > 0)")
    phi, psi = averages.solutions["phi"], averages.solutions["psi"]
    meas = InvariantMeasure.of(model)
    zq, wq = meas.nodes(n_nodes)
    pts, kern = flux_stencil_cached(meas, zq)
    # z-functions on the fixed point sets (GH nodes and the flux stencil)
    zfun = {}
    for key, zz in (("q", zq), ("p", pts)):
        zfun[key] = dict(f=model.vol(zz), dphi=phi.derivative(zz), dpsi=psi.derivative(zz))

    tau = params.T - t
    delta = math.exp(-params.r * tau)
    gam, ar, r = params.gamma, params.excess_return, params.r
    nu, rho = model.nu, model.rho
    rt2 = math.sqrt(2.0)
    sb = averages.sigma_bar

    def U3(side, S, tt):
        return np.asarray(expansion.u3(side, S, tt, averages, model, params), dtype=float)

    def U0SS(side, S, tt):
        if side is Side.PLAIN:
            return np.zeros_like(np.asarray(S, dtype=float))
        return -bs_derivatives(S, tt, sb, params, 2).dS[2]

    # five-point stencils keep the U9 solvability defect near 1e-9
    def d_S(fn, S, h):
        return (fn(S - 2 * h) - 8 * fn(S - h) + 8 * fn(S + h) - fn(S + 2 * h)) / (12 * h)

    def d_SS(fn, S, h):
        return (-fn(S - 2 * h) + 16 * fn(S - h) - 30 * fn(S) + 16 * fn(S + h) - fn(S + 2 * h)) / (12 * h * h)

    def d_t(fn, tt, k):
        if tt - 2 * k >= 0:
            return (fn(tt - 2 * k) - 8 * fn(tt - k) + 8 * fn(tt + k) - fn(tt + 2 * k)) / (12 * k)
        return (-25 * fn(tt) + 48 * fn(tt + k) - 36 * fn(tt + 2 * k) + 16 * fn(tt + 3 * k) - 3 * fn(tt + 4 * k)) / (12 * k)

    def u6z(side, S, zf):
        # U6z = -(1/2 S^2 U0SS phi' + 1/2 (delta/gamma)(alpha-r)^2 psi')
        a = 0.5 * S**2 * U0SS(side, S, t)
        return -(a[:, None] * zf["dphi"][None] + 0.5 * (delta / gam) * ar**2 * zf["dpsi"][None])

    def u9_source(side, S, key):
        zf = zfun[key]
        shp = (S.size,) + (1,) * zf["f"].ndim
        h = rel_step * S
        # L2 U3 with the unaveraged volatility f(z)
        u3 = U3(side, S, t)
        u3_t = d_t(lambda tt: U3(side, S, tt), t, time_step)
        u3_S = d_S(lambda s: U3(side, s, t), S, h)
        u3_SS = d_SS(lambda s: U3(side, s, t), S, h)
        base = (u3_t - r * u3 + r * S * u3_S).reshape(shp)
        L2U3 = base + 0.5 * (S**2 * u3_SS).reshape(shp) * zf["f"][None] ** 2
        # L1 U6z
        c = 0.5 * S**2 * U0SS(side, S, t)
        c_S = d_S(lambda s: 0.5 * s**2 * U0SS(side, s, t), S, h)
        U6_z = -(c.reshape(shp) * zf["dphi"][None] + 0.5 * (delta / gam) * ar**2 * zf["dpsi"][None])
        U6_Sz = -(c_S.reshape(shp) * zf["dphi"][None])
        fz = zf["f"][None]
        L1U6 = -nu * rt2 * rho * ar / fz * U6_z + nu * rt2 * fz * S.reshape(shp) * rho * U6_Sz
        return -(L2U3 + L1U6)

    worst_mean = 0.0

    def u9z_at_nodes(side, S):
        nonlocal worst_mean
        s_q = u9_source(side, S, "q")
        mean = s_q @ wq
        scale = np.abs(s_q) @ wq
        rel = np.abs(mean) / np.maximum(scale, 1e-300)
        worst_mean = max(worst_mean, float(np.max(np.where(scale > 0, rel, 0.0))))
        s_p = u9_source(side, S, "p") - mean[:, None, None]
        return np.einsum("skg,kg->sk", s_p, kern)

    def brackets(side):
        S = S_grid
        h = rel_step * S
        z_q = u9z_at_nodes(side, S)
        f_q = zfun["q"]["f"]
        avg_u9z_over_f = (z_q / f_q[None]) @ wq
        avg_f_u9z = lambda s: (u9z_at_nodes(side, s) * f_q[None]) @ wq  # noqa: E731
        avg_f_u9Sz = d_S(avg_f_u9z, S, h)
        L1U9 = -nu * rt2 * rho * ar * avg_u9z_over_f + nu * rt2 * rho * S * avg_f_u9Sz
        u3_S = d_S(lambda s: U3(side, s, t), S, h)
        U6z_q = u6z(side, S, zfun["q"])
        return dict(
            L1U9=L1U9,
            u3_S=u3_S,
            f_u6z=(U6z_q * f_q[None]) @ wq,
            u6z_sq=(U6z_q**2) @ wq,
        )

    b1, bw = brackets(Side.PLAIN), brackets(Side.WRITER)
    S = S_grid
    numeric = (
        -(b1["L1U9"] - bw["L1U9"])
        + 0.5 * S**2 * averages.sigma_bar_sq * (gam / delta) * (b1["u3_S"] ** 2 - bw["u3_S"] ** 2)
        + nu * rt2 * S * rho * (gam / delta) * (b1["u3_S"] * b1["f_u6z"] - bw["u3_S"] * bw["f_u6z"])
        + nu**2 * (gam / delta) * (b1["u6z_sq"] - bw["u6z_sq"])
    )
    printed = expansion.c6_source_coeffs(S, t, averages, model, params).source(tau)
    diff = numeric - printed
    scale = float(np.max(np.abs(printed)))
    rel = float(np.max(np.abs(diff)) / scale) if scale > 0 else float(np.max(np.abs(diff)))
    rep = ResidualReport(
        name="numeric_source_c6",
        max_abs=float(np.max(np.abs(diff))),
        l2=float(np.sqrt(np.mean(diff**2))),
        spacings=(rel_step, time_step),
        rel_max=rel,
        passed=bool(rel <= rtol and worst_mean <= solvability_tol),
        details={"u9_solvability": worst_mean, "solvability_flagged": worst_mean > solvability_tol},
    )
    return GridFunction1D(S, numeric), rep


_STENCILS: dict = {}


def flux_stencil_cached(meas: InvariantMeasure, zq: np.ndarray):
    key = (meas.m, meas.nu, zq.size)
    if key not in _STENCILS:
        _STENCILS[key] = flux_stencil(meas, zq)
    return _STENCILS[key]


def c6_tilde_pde(
    S,
    t: float,
    averages: AverageSet,
    model: OUVolModel,
    params: MarketParams,
    *,
    n_S: int = 801,
    n_t: int = 400,
) -> np.ndarray:
    """``C6_tilde`` from a direct solve of ``<L2> u = tau^2 A_hat + tau B_hat + C_hat``, ``u(T) = 0``.

    The source is only evaluated strictly before expiry.  Values are
    interpolated (cubic in log S) from the grid onto ``S``.
    """
    from scipy.interpolate import CubicSpline

    if not 0.0 <= t <= params.T:
        raise ValueError(f"t must lie in [0, T={params.T}]")
    if t == params.T:
        return np.zeros_like(np.asarray(S, dtype=float))

    # shift time so the requested t becomes the start of a shorter horizon
    shifted = dataclasses.replace(params, T=params.T - t)

    def src(S_, tt):
        return expansion.c6_source_coeffs(S_, tt + t, averages, model, params).source(shifted.T - tt)

    sol = solve_bs_with_source(src, averages.sigma_bar, shifted, n_S=n_S, n_t=n_t, t_out=[0.0])
    spline = CubicSpline(np.log(sol.x), sol.at(0))
    return spline(np.log(np.asarray(S, dtype=float)))
