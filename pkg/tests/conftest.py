import math

import pytest

from svtc.model import MarketParams, OUVolModel
from svtc.ou_calculus import build_average_set

FIG3_SIGMA = 0.165
NU = 0.5


@pytest.fixture(scope="session")
def fig3_params():
    return MarketParams(r=0.04, alpha=0.1, gamma=1.0, K=100.0, T=3.0)


@pytest.fixture(scope="session")
def fig1_params():
    return MarketParams(r=0.07, alpha=0.1, gamma=1.0, K=0.5, T=0.3)


@pytest.fixture(scope="session")
def fig3_model():
    return OUVolModel(m=math.log(FIG3_SIGMA) - NU**2, nu=NU, rho=-0.2)


@pytest.fixture(scope="session")
def fig3_model_rho0(fig3_model):
    return OUVolModel(m=fig3_model.m, nu=NU, rho=0.0)


@pytest.fixture(scope="session")
def fig3_averages(fig3_model):
    return build_average_set(fig3_model)


@pytest.fixture(scope="session")
def scott_m0():
    """Exponential volatility with m = 0, nu = 0.5."""
    model = OUVolModel(m=0.0, nu=0.5, rho=0.0)
    return model, build_average_set(model)
