"""Option pricing and hedging under fast mean-reverting stochastic volatility with small transaction costs."""
from .bs_kernel import GreeksBundle, bs_derivatives, bs_price
from .estimators import AsymptoticCallPricer, NoTransactionBand
from .expansion import PriceExpansion, SourceCoeffs, c3, c6, c6_source_coeffs, price, u0, u3, u6_z
from .hedging import HedgeBand, InnerProfile, band, inner_profile, y_star
from .model import (
    Asymptotics,
    ConfigError,
    MarketParams,
    OUVolModel,
    ScottWarning,
    Side,
    discount_factor,
    validate,
)
from .ou_calculus import AverageSet, InvariantMeasure, PoissonSolution, average, build_average_set, solve_poisson

__version__ = "0.1.0"

__all__ = [
    "Asymptotics",
    "AsymptoticCallPricer",
    "AverageSet",
    "ConfigError",
    "GreeksBundle",
    "HedgeBand",
    "InnerProfile",
    "InvariantMeasure",
    "MarketParams",
    "NoTransactionBand",
    "OUVolModel",
    "PoissonSolution",
    "PriceExpansion",
    "ScottWarning",
    "Side",
    "SourceCoeffs",
    "average",
    "band",
    "bs_derivatives",
    "bs_price",
    "build_average_set",
    "c3",
    "c6",
    "c6_source_coeffs",
    "discount_factor",
    "inner_profile",
    "price",
    "solve_poisson",
    "u0",
    "u3",
    "u6_z",
    "validate",
    "y_star",
]
