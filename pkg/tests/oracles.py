"""High-precision reference values shared by the tests."""
import mpmath as mp


def mp_call(S, K, r, sigma, tau):
    """Call price at the caller's mpmath precision."""
    S, K, r, sigma, tau = (mp.mpf(x) for x in (S, K, r, sigma, tau))
    v = sigma * mp.sqrt(tau)
    d1 = (mp.log(S / K) + (r + sigma**2 / 2) * tau) / v
    N = lambda x: mp.erfc(-x / mp.sqrt(2)) / 2  # noqa: E731
    return S * N(d1) - K * mp.exp(-r * tau) * N(d1 - v)


def mp_call_derivs(S, K, r, sigma, tau, order, dps=50):
    """``[C, C_S, ..., d^order C / dS^order]`` by mpmath differentiation."""
    with mp.workdps(dps):
        f = lambda s: mp_call(s, K, r, sigma, tau)  # noqa: E731
        return [float(mp.diff(f, mp.mpf(S), n)) for n in range(order + 1)]
