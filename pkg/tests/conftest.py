"""Shared fixtures: small problems, grids and ensembles that keep the suite fast."""

import pytest

from mv_maxprinciple.coeffs.problems import polynomial_model, tp1, tp2, tp3
from mv_maxprinciple.forward.controls import ConstantControl, LinearFeedback
from mv_maxprinciple.forward.ensemble import simulate_mv_sde
from mv_maxprinciple.forward.grid import TimeGrid

SEED = 20240601


@pytest.fixture
def grid():
    return TimeGrid(horizon=1.0, steps=20)


@pytest.fixture
def tp1_model():
    return tp1()


@pytest.fixture
def tp2_model():
    return tp2()


@pytest.fixture
def tp3_model():
    return tp3()


@pytest.fixture
def linear_model():
    """dX = a X dt + sigma dW with g = x^2 / 2 and no measure terms."""
    return polynomial_model({"a": 0.4, "sigma": 0.3, "s": 1.0}, name="linear")


@pytest.fixture
def tp1_ensemble(tp1_model, grid):
    return simulate_mv_sde(tp1_model, grid, ConstantControl(0.0), [1.0], 200, seed=SEED)


@pytest.fixture
def tp3_ensemble(tp3_model, grid):
    return simulate_mv_sde(tp3_model, grid, LinearFeedback(0.5), [0.8], 300, seed=SEED)
