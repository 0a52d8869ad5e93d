"""scikit-learn style front ends for the price expansion and the hedging band.

``fit`` validates the parameters and builds the invariant-measure averages;
``transform``/``predict`` take a 2-D array whose columns are ``S`` or
``(S, t, z)``.  With one column, ``t`` and ``z`` come from the estimator
parameters (``z=None`` means the long-run mean ``m``).
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import expansion, hedging
from .model import Asymptotics, MarketParams, OUVolModel, Side, validate
from .ou_calculus import build_average_set

__all__ = ["AsymptoticCallPricer", "NoTransactionBand", "PRICE_COLUMNS", "BAND_COLUMNS"]

PRICE_COLUMNS = ("C_BS", "C3", "C6_z", "C6_tilde", "total")
BAND_COLUMNS = ("y_star", "lower", "upper")


class _ModelMixin:
    """Shared parameter handling; subclasses declare the constructor."""

    def _build(self, need_epsilon: bool):
        params = MarketParams(r=self.r, alpha=self.alpha, gamma=self.gamma, K=self.K, T=self.T)
        model = OUVolModel(m=self.m, nu=self.nu, rho=self.rho)
        asym = Asymptotics(self.epsilon) if (need_epsilon or self.epsilon != 0) else None
        validate(params, model, asym, warn=False)
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        self.params_ = params
        self.model_ = model
        self.averages_ = build_average_set(model, n_nodes=self.n_nodes)
        return self

    def _columns(self, X):
        X = check_array(X, dtype=float, ensure_all_finite=True)
        if X.shape[1] == 1:
            S = X[:, 0]
            t = np.full_like(S, self.t)
            z = np.full_like(S, self.m if self.z is None else self.z)
        elif X.shape[1] == 3:
            S, t, z = X[:, 0], X[:, 1], X[:, 2]
        else:
            raise ValueError(f"expected 1 column (S) or 3 columns (S, t, z); got {X.shape[1]}")
        if np.any(S <= 0):
            raise ValueError("S must be positive")
        return S, t, z


class AsymptoticCallPricer(_ModelMixin, RegressorMixin, BaseEstimator):
    """Corrected call price ``C_BS + sqrt(eps) C3 + eps (C6_z + C6_tilde)``.

    ``transform`` returns the columns of ``PRICE_COLUMNS``; ``predict``
    returns only ``total``.
    """

    def __init__(
        self,
        r: float = 0.04,
        alpha: float = 0.1,
        gamma: float = 1.0,
        K: float = 100.0,
        T: float = 3.0,
        m: float = -2.0,
        nu: float = 0.5,
        rho: float = 0.0,
        epsilon: float = 1 / 200,
        t: float = 0.0,
        z: Optional[float] = None,
        n_nodes: int = 96,
    ):
        self.r = r
        self.alpha = alpha
        self.gamma = gamma
        self.K = K
        self.T = T
        self.m = m
        self.nu = nu
        self.rho = rho
        self.epsilon = epsilon
        self.t = t
        self.z = z
        self.n_nodes = n_nodes

    def fit(self, X=None, y=None):
        return self._build(need_epsilon=False)

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "averages_")
        S, t, z = self._columns(X)
        out = np.empty((S.size, len(PRICE_COLUMNS)))
        for i in range(S.size):
            pe = expansion.price(S[i], t[i], z[i], self.epsilon, self.averages_, self.model_, self.params_)
            out[i] = (pe.c0, pe.c3, pe.c6_z, pe.c6_tilde, pe.total)
        return out

    def predict(self, X) -> np.ndarray:
        return self.transform(X)[:, -1]


class NoTransactionBand(_ModelMixin, TransformerMixin, BaseEstimator):
    """Hedge centre and band edges (columns ``BAND_COLUMNS``) for one investor side."""

    def __init__(
        self,
        r: float = 0.07,
        alpha: float = 0.1,
        gamma: float = 1.0,
        K: float = 0.5,
        T: float = 0.3,
        m: float = -2.0,
        nu: float = 0.5,
        rho: float = 0.0,
        epsilon: float = 1 / 200,
        side: str = "plain",
        t: float = 0.0,
        z: Optional[float] = None,
        n_nodes: int = 96,
    ):
        self.r = r
        self.alpha = alpha
        self.gamma = gamma
        self.K = K
        self.T = T
        self.m = m
        self.nu = nu
        self.rho = rho
        self.epsilon = epsilon
        self.side = side
        self.t = t
        self.z = z
        self.n_nodes = n_nodes

    def fit(self, X=None, y=None):
        self.side_ = Side(self.side)
        return self._build(need_epsilon=True)

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "averages_")
        S, t, z = self._columns(X)
        b = hedging.band(self.side_, S, t, z, self.epsilon, self.averages_, self.model_, self.params_)
        return np.column_stack([np.broadcast_to(v, S.shape) for v in (b.y_star, b.lower, b.upper)])
