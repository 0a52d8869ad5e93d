import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svtc import simulator as sim
from svtc.bs_kernel import bs_price
from svtc.model import Asymptotics, MarketParams, OUVolModel, Side
from svtc.ou_calculus import build_average_set

P = MarketParams(r=0.05, alpha=0.1, gamma=1.0, K=1.0, T=0.2)
MODEL = OUVolModel(m=math.log(0.2) - 0.25, nu=0.5, rho=-0.3)
EPS = 0.01


@pytest.fixture(scope="module")
def aset():
    return build_average_set(MODEL)


def small(**kw):
    base = dict(n_paths=1000, n_steps=200, seed=3, S0=1.0, block_size=400)
    base.update(kw)
    return sim.SimConfig(**base)


def test_deterministic(aset):
    a = sim.run(small(), EPS, aset, MODEL, P, keep_paths=True)
    b = sim.run(small(), EPS, aset, MODEL, P, keep_paths=True)
    assert a.rows() == b.rows()
    assert np.array_equal(a.terminal[Side.WRITER]["wealth"], b.terminal[Side.WRITER]["wealth"])
    c = sim.run(small(seed=4), EPS, aset, MODEL, P)
    assert c.rows() != a.rows()


def test_keep_paths_and_rows(aset):
    res = sim.run(small(n_paths=950), EPS, aset, MODEL, P, keep_paths=True)
    assert res.terminal["S"].shape == (950,)
    assert res.terminal[Side.PLAIN]["y"].shape == (950,)
    rows = res.rows()
    assert [r["side"] for r in rows] == ["plain", "writer"]
    assert rows[0]["policy"] == "band" and rows[0]["kappa"] == 1.0


def test_rebalance_inside_band_is_noop():
    st0 = sim.PathState(0.0, np.array([1.0, 2.0]), np.array([0.5, 0.7]), np.array([10.0, 10.0]), np.zeros(2))
    st1, traded, paid = sim.rebalance(st0, np.array([0.0, 0.6]), np.array([1.0, 0.8]), 0.01)
    assert np.array_equal(st1.B, st0.B) and np.array_equal(st1.y, st0.y)
    assert not traded.any() and np.all(paid == 0)


def test_rebalance_accounting():
    st0 = sim.PathState(0.0, np.zeros(2), np.array([2.0, 0.0]), np.array([10.0, 10.0]), np.zeros(2))
    st1, traded, paid = sim.rebalance(st0, np.array([0.0, 1.0]), np.array([1.0, 2.0]), 0.01)
    # sell one share at (1 - cost) S, buy one at (1 + cost) S
    np.testing.assert_allclose(st1.B, [9.9, -10.1], rtol=1e-15)
    np.testing.assert_array_equal(st1.y, [1.0, 1.0])
    np.testing.assert_allclose(paid, [0.1, 0.1], rtol=1e-15)
    assert traded.all()


@settings(max_examples=50, deadline=None)
@given(
    y=st.floats(-5, 5),
    lo=st.floats(-3, 3),
    w=st.floats(0, 2),
    S=st.floats(0.1, 100),
)
def test_rebalance_lands_in_band(y, lo, w, S):
    st0 = sim.PathState(0.0, np.zeros(1), np.array([y]), np.array([S]), np.zeros(1))
    st1, _, paid = sim.rebalance(st0, np.array([lo]), np.array([lo + w]), 0.02)
    assert lo <= st1.y[0] <= lo + w
    # wealth marked at mid price only loses the cost
    before = st0.B[0] + y * S
    after = st1.B[0] + st1.y[0] * S
    assert after == pytest.approx(before - paid[0], abs=1e-9 * max(1.0, abs(before)))


def test_utility():
    assert sim.utility(0.0, 2.0) == 0.0
    assert sim.utility(1.0, 2.0) == pytest.approx(1 - math.exp(-2.0), rel=1e-15)
    x = np.linspace(-2, 2, 9)
    assert np.all(np.diff(sim.utility(x, 1.5)) > 0)


def test_liquidation_and_tie_break():
    np.testing.assert_allclose(sim.liquidation_value(np.array([2.0, -2.0]), 10.0, 0.01), [19.8, -20.2])
    st0 = sim.PathState(P.T, np.array([0.5, 0.5, 0.5]), np.array([1.0, 1.0, 1.0]), np.array([0.9, 1.0, 1.1]), np.zeros(3))
    plain = sim.terminal_value(Side.PLAIN, st0, P, 0.0)
    writer = sim.terminal_value(Side.WRITER, st0, P, 0.0)
    np.testing.assert_allclose(writer - plain, [0.0, 0.0, -0.1], atol=1e-15)


def test_writer_without_trading_keeps_premium(aset):
    res = sim.run(small(policy="none", n_paths=300), EPS, aset, MODEL, P, keep_paths=True)
    premium = float(bs_price(1.0, 0.0, aset.sigma_bar, P).price)
    S_T = res.terminal["S"]
    # the delivered share is bought at the ask, (1 + eps^2) S
    ref = premium * math.exp(P.r * P.T) - np.where(S_T > P.K, (1 + EPS**2) * S_T - P.K, 0.0)
    np.testing.assert_allclose(res.terminal[Side.WRITER]["wealth"], ref, rtol=1e-12, atol=1e-12)
    assert np.all(res.terminal[Side.PLAIN]["wealth"] == 0.0)
    assert np.all(res.terminal[Side.WRITER]["trades"] == 0)


@pytest.mark.parametrize("rho", [1.0, -1.0])
def test_perfect_correlation(rho):
    model = OUVolModel(m=-1.5, nu=0.5, rho=rho)
    asym = Asymptotics(EPS)
    n = 2000
    rng = np.random.default_rng(0)
    st0 = sim.PathState(0.0, np.ones(n), np.zeros(n), np.ones(n), np.full(n, -1.5))
    st1 = sim.step(st0, 1e-4, rng.standard_normal((2, n)), model, asym, P)
    c = np.corrcoef(np.log(st1.S), st1.z)[0, 1]
    assert c == pytest.approx(rho, abs=1e-12)


def test_ou_stationary_variance():
    """m = 0, nu = 0.5, eps = 1/200, run to T = 1 from the mean.

    Euler with step dt has stationary variance nu^2 / (1 - dt / (2 eps)),
    which is the reference at 3 standard errors.
    """
    eps = 1 / 200
    model = OUVolModel(m=0.0, nu=0.5, rho=0.0)
    asym = Asymptotics(eps)
    n, dt = 10000, eps / 20
    rng = np.random.default_rng(1)
    st0 = sim.PathState(0.0, np.ones(n), np.zeros(n), np.ones(n), np.zeros(n))
    for _ in range(round(1.0 / dt)):
        st0 = sim.step(st0, dt, rng.standard_normal((2, n)), model, asym, P)
    ref = 0.25 / (1 - dt / (2 * eps))
    var = st0.z.var(ddof=1)
    assert abs(var - ref) <= 3 * var * math.sqrt(2 / (n - 1))
    assert abs(st0.z.mean()) <= 3 * math.sqrt(var / n)


def test_standard_error_scaling(aset):
    a = sim.run(small(n_paths=1000), EPS, aset, MODEL, P)
    b = sim.run(small(n_paths=4000), EPS, aset, MODEL, P)
    ratio = a.sides[Side.WRITER].wealth_se / b.sides[Side.WRITER].wealth_se
    assert ratio == pytest.approx(2.0, rel=0.15)


def test_discounted_stock_martingale():
    params = MarketParams(r=0.04, alpha=0.04, gamma=1.0, K=100.0, T=3.0)
    frozen = OUVolModel(m=math.log(0.165), nu=0.0, rho=0.0)
    cfg = sim.SimConfig(n_paths=100_000, n_steps=20, seed=9, policy="none", S0=100.0)
    res = sim.run(cfg, 1 / 200, build_average_set(frozen), frozen, params)
    assert abs(res.disc_S_mean - 100.0) <= 3 * res.disc_S_se


def test_step_size_guards(aset):
    with pytest.raises(ValueError, match="allow_coarse"):
        sim.run(small(n_steps=10), EPS, aset, MODEL, P)
    with pytest.warns(sim.StabilityWarning):
        sim.run(small(n_steps=10, n_paths=10, allow_coarse=True), EPS, aset, MODEL, P)
    flat = OUVolModel(m=MODEL.m, nu=0.0, rho=0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        sim.run(small(n_steps=10, n_paths=10, policy="bs_delta"), EPS, build_average_set(flat), flat, P)
    st0 = sim.PathState(0.0, np.ones(1), np.zeros(1), np.ones(1), np.zeros(1))
    with pytest.warns(sim.StabilityWarning):
        sim.step(st0, EPS, np.zeros((2, 1)), MODEL, Asymptotics(EPS), P)
    with pytest.raises(ValueError):
        sim.step(st0, 0.0, np.zeros((2, 1)), MODEL, Asymptotics(EPS), P)


@pytest.mark.parametrize(
    "kw",
    [dict(n_paths=0), dict(n_steps=0), dict(rebalance_every=0), dict(policy="greedy"), dict(kappa=0.0), dict(S0=-1.0)],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        small(**kw)


def test_bs_delta_policy_tracks_delta(aset):
    res = sim.run(small(policy="bs_delta", n_paths=200), EPS, aset, MODEL, P, keep_paths=True)
    assert np.all(res.terminal[Side.PLAIN]["y"] == 0.0)
    assert np.all((res.terminal[Side.WRITER]["y"] >= 0) & (res.terminal[Side.WRITER]["y"] <= 1))


def test_wider_band_trades_less(aset):
    narrow = sim.run(small(policy="scaled_band", kappa=0.5), EPS, aset, MODEL, P)
    wide = sim.run(small(policy="scaled_band", kappa=2.0), EPS, aset, MODEL, P)
    assert wide.sides[Side.WRITER].trades_mean < narrow.sides[Side.WRITER].trades_mean
    assert wide.sides[Side.WRITER].costs_mean < narrow.sides[Side.WRITER].costs_mean
