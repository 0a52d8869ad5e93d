import io
import math

import numpy as np
import pytest

from svtc import expansion
from svtc.bs_kernel import bs_price
from svtc.model import MarketParams, OUVolModel
from svtc.verification import (
    GridFunction1D,
    GridFunction2D,
    ResidualReport,
    apply_operator,
    c6_tilde_pde,
    numeric_source_c6,
    refinement_order,
    residual,
    solve_bs_with_source,
    write_reports_csv,
)

P = MarketParams(r=0.04, alpha=0.1, gamma=1.5, K=100.0, T=1.0)
MODEL = OUVolModel(m=-1.0, nu=0.6, rho=-0.4)


def test_l0_kills_constants():
    z = np.linspace(-4, 2, 61)
    res = apply_operator("L0", GridFunction1D(z, np.full_like(z, 3.7)), MODEL, P)
    assert np.all(res.values == 0.0)
    assert res.axis.size == z.size - 2


def test_l0_manufactured_order():
    u = lambda z: np.exp(-(z**2))  # noqa: E731
    src = lambda z: (MODEL.m - z) * -2 * z * u(z) + MODEL.nu**2 * (4 * z**2 - 2) * u(z)  # noqa: E731
    grids = [(np.linspace(-3, 3, n),) for n in (201, 401)]
    rep = residual("gauss", u, "L0", src, MODEL, P, grids)
    assert rep.order == pytest.approx(2.0, abs=0.05)
    assert rep.max_abs < 1e-3


def test_nl_on_linear_function():
    z = np.linspace(-2, 0, 21)
    res = apply_operator("NL", GridFunction1D(z, 2 * z), MODEL, P)
    ref = -MODEL.nu**2 * (P.gamma / math.exp(-P.r * P.T)) * 4
    np.testing.assert_allclose(res.values, ref, rtol=1e-12)


def test_l1_on_bilinear_function():
    S, z = np.linspace(50, 150, 11), np.linspace(-2, 0, 9)
    Sg, zg = np.meshgrid(S, z, indexing="ij")
    res = apply_operator("L1", GridFunction2D(S, z, Sg * zg), MODEL, P)
    Si, zi = np.meshgrid(res.x, res.y, indexing="ij")
    f = np.exp(zi)
    k = MODEL.nu * math.sqrt(2) * MODEL.rho
    ref = -k * P.excess_return / f * Si + k * f * Si
    np.testing.assert_allclose(res.values, ref, rtol=1e-10)


def test_l2_exact_on_quadratic():
    sig = 0.2
    S, t = np.linspace(50, 150, 21), np.linspace(0, 1, 11)
    u = lambda S_, t_: S_**2 * (P.T - t_)  # noqa: E731
    src = lambda S_, t_: -(S_**2) + (sig**2 + P.r) * S_**2 * (P.T - t_)  # noqa: E731
    rep = residual("quad", u, "L2", src, MODEL, P, [(S, t)], sigma_bar=sig)
    assert rep.max_abs < 1e-9


def test_l2_averaged_on_black_scholes():
    sig = 0.2
    u = lambda S_, t_: bs_price(S_, t_, sig, P).price  # noqa: E731
    grids = [(np.linspace(60, 160, n), np.linspace(0, 0.8, n)) for n in (101, 201)]
    rep = residual("bs", u, "L2_averaged", lambda S_, t_: 0.0 * S_, MODEL, P, grids, sigma_bar=sig)
    assert rep.order == pytest.approx(2.0, abs=0.1)
    assert rep.max_abs < 1e-2


def test_residual_flags_perturbed_c3(fig3_params, fig3_model, fig3_averages):
    from svtc.checks import c3_source

    src = c3_source(fig3_averages, fig3_model, fig3_params)
    grids = [(np.linspace(60, 160, n), np.linspace(0, 2.5, n)) for n in (81, 161)]
    good = lambda S_, t_: expansion.c3(S_, t_, fig3_averages, fig3_model, fig3_params)  # noqa: E731
    bad = lambda S_, t_: good(S_, t_) + 1e-3 * S_ * (fig3_params.T - t_)  # noqa: E731
    sb = fig3_averages.sigma_bar
    rep_good = residual("c3", good, "L2", src, fig3_model, fig3_params, grids, sigma_bar=sb)
    rep_bad = residual("c3+", bad, "L2", src, fig3_model, fig3_params, grids, sigma_bar=sb)
    assert rep_good.order == pytest.approx(2.0, abs=0.2)
    assert rep_bad.max_abs > 50 * rep_good.max_abs
    assert abs(rep_bad.order) < 0.1


def test_operator_errors():
    z = np.linspace(0, 1, 5)
    with pytest.raises(ValueError):
        apply_operator("L9", GridFunction1D(z, z), MODEL, P)
    with pytest.raises(ValueError):
        apply_operator("L2", GridFunction1D(z, z), MODEL, P)
    with pytest.raises(ValueError):
        apply_operator("L2", GridFunction2D(z, z, np.zeros((5, 5))), MODEL, P)
    with pytest.raises(ValueError):
        GridFunction1D(z[::-1], z)
    with pytest.raises(ValueError):
        GridFunction2D(z, z, np.zeros((4, 5)))
    with pytest.raises(ValueError):
        apply_operator("L0", GridFunction1D(z**2 + z, z), MODEL, P)


def test_solver_zero_source():
    sol = solve_bs_with_source(lambda S, t: 0.0 * S, 0.2, P, n_S=101, n_t=50)
    assert np.all(sol.values == 0.0)


def test_solver_reproduces_black_scholes():
    sig = 0.2
    disc = lambda t: math.exp(-P.r * (P.T - t))  # noqa: E731
    sol = solve_bs_with_source(
        lambda S, t: 0.0 * S,
        sig,
        P,
        final_data=lambda S: np.maximum(S - P.K, 0.0),
        boundary=(lambda S, t: 0.0, lambda S, t: S - P.K * disc(t)),
        n_S=801,
        n_t=400,
    )
    i = int(np.argmin(np.abs(np.log(sol.x / P.K))))
    ref = bs_price(sol.x[i], 0.0, sig, P).price
    assert sol.at(0)[i] == pytest.approx(ref, rel=1e-4)


def test_solver_spatially_constant_source():
    """u = a (T - t) solves u_t - r u = -a - r a (T - t)."""
    a = 2.0
    exact = lambda S, t: a * (P.T - t) + 0.0 * S  # noqa: E731
    sol = solve_bs_with_source(
        lambda S, t: -a - P.r * a * (P.T - t) + 0.0 * S,
        0.25,
        P,
        boundary=(exact, exact),
        n_S=201,
        n_t=200,
    )
    np.testing.assert_allclose(sol.at(0), a * P.T, rtol=1e-6)


def test_refinement_order():
    assert refinement_order(4.0, 1.0) == pytest.approx(2.0)
    assert refinement_order(9.0, 1.0, ratio=3.0) == pytest.approx(2.0)


def test_numeric_source_at_zero_correlation(fig3_params, fig3_model_rho0, fig3_averages):
    S = np.linspace(70, 130, 7)
    numeric, rep = numeric_source_c6(S, 0.5, fig3_averages, fig3_model_rho0, fig3_params)
    assert rep.passed
    assert rep.rel_max < 1e-10
    assert not rep.details["solvability_flagged"]
    assert np.array_equal(numeric.axis, S)


def test_numeric_source_needs_poisson_solutions(fig3_params):
    flat = OUVolModel(m=-2.0, nu=0.0, rho=0.0)
    from svtc.ou_calculus import build_average_set

    with pytest.raises(ValueError):
        numeric_source_c6(np.array([100.0]), 0.0, build_average_set(flat), flat, fig3_params)


def test_c6_tilde_pde_edges(fig3_params, fig3_model, fig3_averages):
    S = np.array([90.0, 110.0])
    assert np.all(c6_tilde_pde(S, fig3_params.T, fig3_averages, fig3_model, fig3_params) == 0.0)
    with pytest.raises(ValueError):
        c6_tilde_pde(S, -0.1, fig3_averages, fig3_model, fig3_params)


def test_reports_csv_and_text():
    reps = [
        ResidualReport("a", 1e-3, 5e-4, (0.1,), 2.0, 1e-5, True),
        ResidualReport("b", 2.0, 1.0),
    ]
    buf = io.StringIO()
    write_reports_csv(reps, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "name,max_abs,l2,rel_max,order,passed"
    assert lines[1] == "a,0.001,0.0005,1e-05,2,True"
    assert lines[2] == "b,2,1,,,"
    assert reps[0].to_text().startswith("[PASS] a:")
    assert reps[1].to_text().startswith("[INFO] b:")
