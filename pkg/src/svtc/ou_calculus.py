"""Invariant-measure calculus for the Ornstein-Uhlenbeck volatility driver.

The generator of the (time-rescaled) driver is

    L0 chi = (m - z) chi' + nu**2 chi'',

whose invariant law is N(m, nu**2).  ``L0 chi = s`` is solvable iff
``<s> = 0``, and then

    chi'(z) = 1 / (nu**2 p(z)) * int_{-inf}^{z} s(u) p(u) du.

In the standardised variable ``x = (z - m)/nu`` this is

    chi'(x) = (1/nu) int_0^inf s(x - w) exp(x w - w**2 / 2) dw        (x <= 0)
    chi'(x) = -(1/nu) int_0^inf s(x + w) exp(-x w - w**2 / 2) dw      (x > 0)

(the two agree because the source is centred).  The kernel never under-
or overflows, so ``chi'`` can be evaluated anywhere, including at the
far Gauss-Hermite nodes, with a fixed Gauss-Legendre rule on a truncated
half line.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .model import OUVolModel

__all__ = [
    "SolvabilityError",
    "InvariantMeasure",
    "PoissonSolution",
    "AverageSet",
    "average",
    "solve_poisson",
    "build_average_set",
    "scott_closed_form",
    "scott_phi_prime",
    "flux_stencil",
    "AVERAGE_FIELDS",
]

# kernel truncated where exp((y + a) w - w^2/2) < exp(-_KERNEL_LOG_CUT), with
# a = _SOURCE_GROWTH * nu covering sources that grow like exp(4 (z - m))
_KERNEL_LOG_CUT = 42.0
_SOURCE_GROWTH = 4.0
_GL_NODES = 64
_CHUNK = 512


class SolvabilityError(ValueError):
    """Source of a Poisson problem is not centred under the invariant law."""


@lru_cache(maxsize=8)
def _hermite_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    # probabilists' rule: sum w_k g(x_k) ~ E[g(X)], X ~ N(0, 1)
    x, w = np.polynomial.hermite.hermgauss(n)
    return x * math.sqrt(2.0), w / math.sqrt(math.pi)


@lru_cache(maxsize=8)
def _legendre_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True)
class InvariantMeasure:
    m: float
    nu: float

    @classmethod
    def of(cls, model: OUVolModel) -> "InvariantMeasure":
        return cls(model.m, model.nu)

    def density(self, z):
        z = np.asarray(z, dtype=float)
        return np.exp(-0.5 * ((z - self.m) / self.nu) ** 2) / (self.nu * math.sqrt(2 * math.pi))

    def nodes(self, n: int = 96) -> tuple[np.ndarray, np.ndarray]:
        x, w = _hermite_rule(n)
        return self.m + self.nu * x, w


def average(g: Callable, meas: InvariantMeasure, n_nodes: int = 96) -> float:
    """``<g>`` under N(m, nu^2) by Gauss-Hermite quadrature.

    With ``nu = 0`` the measure is a point mass and ``g(m)`` is returned.
    """
    if meas.nu == 0:
        val = float(np.asarray(g(np.array([meas.m])), dtype=float).reshape(-1)[0])
        if not np.isfinite(val):
            raise ValueError(f"integrand is not finite at z={meas.m}")
        return val
    z, w = meas.nodes(n_nodes)
    vals = np.asarray(g(z), dtype=float)
    bad = ~np.isfinite(vals)
    if np.any(bad):
        raise ValueError(f"integrand is not finite at node z={z[bad][0]!r}")
    # fixed summation order
    return float(np.dot(w, vals))


def flux_stencil(meas: InvariantMeasure, z, n_gl: int = _GL_NODES) -> tuple[np.ndarray, np.ndarray]:
    """Points and weights such that ``chi'(z) = (s(points) * weights).sum(-1)``.

    Lets callers evaluate an expensive source once on a fixed point set and
    reuse it for many Poisson problems.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    t, tw = _legendre_rule(n_gl)
    x = (z - meas.m) / meas.nu
    sgn = np.where(x > 0, -1.0, 1.0)
    y = -np.abs(x)
    ya = y + _SOURCE_GROWTH * meas.nu
    wmax = ya + np.sqrt(ya * ya + 2.0 * _KERNEL_LOG_CUT)
    w = wmax[:, None] * t[None, :]
    kern = np.exp(y[:, None] * w - 0.5 * w * w)
    pts = meas.m + meas.nu * (x[:, None] - sgn[:, None] * w)
    weights = (sgn * wmax / meas.nu)[:, None] * kern * tw[None, :]
    return pts, weights


def _flux(source: Callable, meas: InvariantMeasure, z, n_gl: int = _GL_NODES) -> np.ndarray:
    """``chi'(z)`` for a centred ``source`` (see module docstring)."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    out = np.empty_like(z)
    for lo in range(0, z.size, _CHUNK):
        pts, wts = flux_stencil(meas, z[lo : lo + _CHUNK], n_gl)
        s = np.asarray(source(pts), dtype=float)
        out[lo : lo + _CHUNK] = (s * wts).sum(axis=1)
    return out


@dataclass(frozen=True)
class PoissonSolution:
    """Solution of ``L0 chi = source`` normalised by ``<chi> = 0``.

    ``grid``/``chi``/``chi_prime`` are a tabulation on ``[m - 8 nu, m + 8 nu]``;
    ``derivative`` evaluates ``chi'`` anywhere without interpolation.
    """

    grid: np.ndarray
    chi: np.ndarray
    chi_prime: np.ndarray
    source_id: str
    shift: float
    meas: InvariantMeasure
    source: Callable = field(repr=False)
    n_gl: int = _GL_NODES

    def derivative(self, z):
        z = np.asarray(z, dtype=float)
        if self.meas.nu == 0:
            return np.zeros_like(z)
        return _flux(self.source, self.meas, z.reshape(-1), self.n_gl).reshape(z.shape)

    def second_derivative(self, z):
        """``chi'' = (s - (m - z) chi') / nu^2`` from the equation itself."""
        z = np.asarray(z, dtype=float)
        nu2 = self.meas.nu**2
        return (self.source(z) - (self.meas.m - z) * self.derivative(z)) / nu2

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self.meas.nu == 0:
            return np.zeros_like(z)
        return self._spline(z)

    @property
    def _spline(self) -> CubicHermiteSpline:
        sp = self.__dict__.get("_sp")
        if sp is None:
            sp = CubicHermiteSpline(self.grid, self.chi, self.chi_prime, extrapolate=True)
            object.__setattr__(self, "_sp", sp)
        return sp

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["z", "chi", "chi_prime"])
            for row in zip(self.grid, self.chi, self.chi_prime):
                wr.writerow([f"{v:.12g}" for v in row])


def solve_poisson(
    source: Callable,
    meas: InvariantMeasure,
    *,
    source_id: str = "custom",
    n_grid: int = 4001,
    span: float = 8.0,
    tol: float = 1e-9,
    n_nodes: int = 96,
    n_gl: int = _GL_NODES,
) -> PoissonSolution:
    """Solve ``L0 chi = source`` with the gauge ``<chi> = 0``.

    The source mean is checked against ``tol`` (relative to ``<|source|>``)
    and then removed exactly; the removed amount is stored as ``shift``.
    """
    if meas.nu <= 0:
        raise ValueError("degenerate invariant measure (nu = 0): L0 has no inverse")
    mean = average(source, meas, n_nodes)
    scale = average(lambda z: np.abs(source(z)), meas, n_nodes)
    if abs(mean) > tol * max(scale, 1e-300) and abs(mean) > 1e-300:
        raise SolvabilityError(
            f"source '{source_id}' has mean {mean:.3e} (scale {scale:.3e}); solvability requires 0"
        )

    def centred(z, _s=source, _c=mean):
        return np.asarray(_s(z), dtype=float) - _c

    grid = np.linspace(meas.m - span * meas.nu, meas.m + span * meas.nu, n_grid)
    cp = _flux(centred, meas, grid, n_gl)
    h = grid[1] - grid[0]
    cpp = (centred(grid) - (meas.m - grid) * cp) / meas.nu**2
    # trapezoid with the Euler-Maclaurin end correction on each cell
    cell = 0.5 * h * (cp[1:] + cp[:-1]) - h * h / 12.0 * (cpp[1:] - cpp[:-1])
    chi = np.concatenate([[0.0], np.cumsum(cell)])
    chi -= _grid_mean(chi, grid, meas)
    return PoissonSolution(grid, chi, cp, source_id, mean, meas, centred, n_gl)


def _grid_mean(vals, grid, meas) -> float:
    from scipy.integrate import simpson

    p = meas.density(grid)
    return float(simpson(vals * p, x=grid) / simpson(p, x=grid))


AVERAGE_FIELDS = (
    "sigma_bar_sq",
    "inv_tau_sq",
    "a_fphi",
    "a_phif",
    "a_psif",
    "a_psif_up",
    "a_phi2",
    "a_phipsi",
    "a_Ff",
    "a_Finvf",
    "a_Gf",
    "a_Ginvf",
)


@dataclass(frozen=True)
class AverageSet:
    """Every invariant-measure average the price and hedge formulas consume."""

    sigma_bar_sq: float
    inv_tau_sq: float
    a_fphi: float
    a_phif: float
    a_psif: float
    a_psif_up: float
    a_phi2: float
    a_phipsi: float
    a_Ff: float
    a_Finvf: float
    a_Gf: float
    a_Ginvf: float
    solutions: Optional[dict] = field(default=None, repr=False, compare=False)
    closed_form: Optional[dict] = field(default=None, repr=False, compare=False)

    @property
    def sigma_bar(self) -> float:
        return math.sqrt(self.sigma_bar_sq)

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in AVERAGE_FIELDS}


def _moment(k: float, m: float, nu: float) -> float:
    return math.exp(k * m + 0.5 * k * k * nu * nu)


def _cancelled(terms, x: float) -> float:
    """``sum c x**p exp(b x) / x**2`` for ``(c, p, b)`` whose x**0 and x**1 parts cancel.

    Below ``x = 0.5`` the Taylor series is summed instead of the exponentials.
    """
    if x > 0.5:
        return math.fsum(c * x**p * math.exp(b * x) for c, p, b in terms) / (x * x)
    total, xn = 0.0, 1.0
    for n in range(2, 40):
        coef = math.fsum(c * b ** (n - p) / math.factorial(n - p) for c, p, b in terms if n >= p)
        total += coef * xn
        xn *= x
    return total


def scott_closed_form(m: float, nu: float) -> dict[str, float]:
    """Closed forms for ``f = exp(z)`` from Gaussian exponential moments.

    Every ``<g chi'>`` is rewritten by parts as ``-(1/nu^2) <G s>`` with
    ``G' = g``.  ``<phi'^2>`` and ``<phi' psi'>`` need ``phi`` itself and
    have no such form; they are absent from the result.
    """
    M = lambda k: _moment(k, m, nu)  # noqa: E731
    nu2 = nu * nu
    out = {"sigma_bar_sq": M(2), "inv_tau_sq": M(-2)}
    if nu == 0:
        out.update(dict.fromkeys(["a_fphi", "a_phif", "a_psif", "a_psif_up", "a_Ff", "a_Finvf", "a_Gf", "a_Ginvf"], 0.0))
        return out
    em1 = math.expm1
    # <f phi'> = -(M3 - M1 M2)/nu^2 etc., factored to keep digits at small nu
    a_fphi = -math.exp(3 * m + 2.5 * nu2) * em1(2 * nu2) / nu2
    a_phif = -math.exp(m + 0.5 * nu2) * em1(2 * nu2) / nu2
    a_psif = math.exp(-3 * m + 4.5 * nu2) * -em1(-2 * nu2) / nu2
    a_psif_up = -math.exp(-m + 0.5 * nu2) * -em1(2 * nu2) / nu2
    out.update(
        a_fphi=a_fphi,
        a_phif=a_phif,
        a_psif=a_psif,
        a_psif_up=a_psif_up,
        # second-order averages: the O(1) and O(nu^2) terms cancel exactly
        a_Ff=math.exp(4 * m) * _cancelled(((0.5, 0, 8), (-0.5, 0, 4), (-1, 0, 5), (1, 0, 3)), nu2),
        a_Finvf=math.exp(2 * m) * _cancelled(((1, 0, 5), (-1, 0, 3), (-2, 1, 2)), nu2),
        a_Gf=math.exp(2 * m) * _cancelled(((2, 1, 2), (1, 0, 1), (-1, 0, 3)), nu2),
        a_Ginvf=_cancelled(((-0.5, 0, 4), (0.5, 0, 0), (-1, 0, 1), (1, 0, 3)), nu2),
    )
    return out


def scott_phi_prime(z, m: float, nu: float):
    """``phi'`` for ``f = exp(z)`` through the normal CDF (independent of :func:`solve_poisson`)."""
    from scipy.special import log_ndtr

    z = np.asarray(z, dtype=float)
    x = (z - m) / nu
    a = 2.0 * nu
    logpdf = -0.5 * x * x - 0.5 * math.log(2 * math.pi)
    lo = np.exp(log_ndtr(x - a) - logpdf) - np.exp(log_ndtr(x) - logpdf)
    hi = np.exp(log_ndtr(-x) - logpdf) - np.exp(log_ndtr(a - x) - logpdf)
    ratio = np.where(x <= 0, lo, hi)
    return _moment(2, m, nu) * ratio / nu


def build_average_set(
    model: OUVolModel,
    *,
    n_nodes: int = 96,
    n_grid: int = 4001,
    closed_form_rtol: float = 1e-8,
) -> AverageSet:
    """Solve the four Poisson problems and compute all twelve averages.

    Sources: ``phi`` from ``f^2``, ``psi`` from ``1/f^2``, ``F`` from
    ``f phi'`` and ``G`` from ``phi'/f`` (each centred).  For the Scott
    model the closed forms are computed too and must agree to
    ``closed_form_rtol``.
    """
    meas = InvariantMeasure.of(model)
    f = model.vol
    avg = lambda g: average(g, meas, n_nodes)  # noqa: E731
    s2 = avg(lambda z: f(z) ** 2)
    it2 = avg(lambda z: f(z) ** -2)
    closed = scott_closed_form(model.m, model.nu) if model.is_scott else None

    if model.nu == 0:
        zero = dict.fromkeys(AVERAGE_FIELDS[2:], 0.0)
        return AverageSet(s2, it2, **zero, solutions=None, closed_form=closed)

    kw = dict(n_grid=n_grid, n_nodes=n_nodes)
    phi = solve_poisson(lambda z: f(z) ** 2 - s2, meas, source_id="phi", **kw)
    psi = solve_poisson(lambda z: f(z) ** -2 - it2, meas, source_id="psi", **kw)
    dphi, dpsi = phi.derivative, psi.derivative
    a_fphi = avg(lambda z: f(z) * dphi(z))
    a_phif = avg(lambda z: dphi(z) / f(z))
    F = solve_poisson(lambda z: f(z) * dphi(z) - a_fphi, meas, source_id="F", **kw)
    G = solve_poisson(lambda z: dphi(z) / f(z) - a_phif, meas, source_id="G", **kw)
    vals = dict(
        sigma_bar_sq=s2,
        inv_tau_sq=it2,
        a_fphi=a_fphi,
        a_phif=a_phif,
        a_psif=avg(lambda z: dpsi(z) / f(z)),
        a_psif_up=avg(lambda z: dpsi(z) * f(z)),
        a_phi2=avg(lambda z: dphi(z) ** 2),
        a_phipsi=avg(lambda z: dphi(z) * dpsi(z)),
        a_Ff=avg(lambda z: F.derivative(z) * f(z)),
        a_Finvf=avg(lambda z: F.derivative(z) / f(z)),
        a_Gf=avg(lambda z: G.derivative(z) * f(z)),
        a_Ginvf=avg(lambda z: G.derivative(z) / f(z)),
    )
    if closed is not None:
        bad = {
            k: (vals[k], v)
            for k, v in closed.items()
            if abs(vals[k] - v) > closed_form_rtol * max(abs(v), 1e-300)
        }
        if bad:
            raise ArithmeticError(f"closed form and quadrature disagree: {bad}")
    return AverageSet(**vals, solutions={"phi": phi, "psi": psi, "F": F, "G": G}, closed_form=closed)
