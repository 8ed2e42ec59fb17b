"""Tests for the second-order adjoint (P, Q)."""

import numpy as np
import pytest

from mv_maxprinciple.adjoint.first import solve_first_adjoint
from mv_maxprinciple.adjoint.second import homogeneous_terms, second_terminal, solve_second_adjoint
from mv_maxprinciple.config import AdjointConfig
from mv_maxprinciple.forward.controls import ConstantControl
from mv_maxprinciple.forward.ensemble import simulate_mv_sde
from mv_maxprinciple.forward.grid import TimeGrid
from mv_maxprinciple.verify.riccati import MeanFieldRiccati, discrete_second_order

SEED = 20240601


def _riccati_error(model, steps: int) -> float:
    grid = TimeGrid(horizon=1.0, steps=steps)
    ens = simulate_mv_sde(model, grid, ConstantControl(0.0), [1.0], 50, seed=SEED)
    first = solve_first_adjoint(model, ens)
    second = solve_second_adjoint(model, ens, first)
    ref = MeanFieldRiccati.from_params(model.params, grid.horizon).second_order(grid.knots)
    return float(np.max(np.abs(second.P[:, :, 0, 0] - ref[None, :]) / np.abs(ref[None, :])))


class TestRiccatiOracle:
    def test_matches_second_order_ode(self, tp1_model):
        assert _riccati_error(tp1_model, 200) < 0.01

    def test_first_order_in_time_step(self, tp1_model):
        ratio = _riccati_error(tp1_model, 100) / _riccati_error(tp1_model, 200)
        assert 1.6 < ratio < 2.4

    def test_matches_backward_euler_recursion(self, tp1_model):
        grid = TimeGrid(horizon=1.0, steps=50)
        ens = simulate_mv_sde(tp1_model, grid, ConstantControl(0.0), [1.0], 20, seed=SEED)
        second = solve_second_adjoint(tp1_model, ens, solve_first_adjoint(tp1_model, ens))
        riccati = MeanFieldRiccati.from_params(tp1_model.params, grid.horizon)
        discrete = discrete_second_order(riccati, grid.knots)
        assert np.max(np.abs(second.P[:, :, 0, 0] - discrete) / np.abs(discrete)) < 1e-3


class TestTerminal:
    def test_shape_on_nonlinear_model(self, tp3_model, tp3_ensemble):
        plain = second_terminal(tp3_model, tp3_ensemble)
        assert plain.shape == (300, 1, 1)
        assert np.all(np.isfinite(plain))

    def test_tp1_terminal_is_s(self, tp1_model, tp1_ensemble):
        assert np.allclose(second_terminal(tp1_model, tp1_ensemble), tp1_model.params["s"])


class TestHomogeneousTerms:
    def test_scalar_case(self):
        Ax = np.full((2, 1, 1), 0.5)
        Bx = np.full((2, 1, 1, 1), 0.2)
        P = np.full((2, 1, 1), 3.0)
        Q = np.full((2, 1, 1, 1), 1.0)
        value = homogeneous_terms(Ax, Bx, P, Q)
        assert np.allclose(value, 2 * 0.5 * 3.0 + 0.2 * 3.0 * 0.2 + 2 * 0.2 * 1.0)


class TestSolve:
    def test_shapes_and_terminal(self, tp1_model, tp1_ensemble):
        first = solve_first_adjoint(tp1_model, tp1_ensemble)
        second = solve_second_adjoint(tp1_model, tp1_ensemble, first)
        steps = tp1_ensemble.grid.steps
        assert second.P.shape == (200, steps + 1, 1, 1)
        assert second.Q.shape == (200, steps, 1, 1, 1)
        assert np.allclose(second.P[:, steps], tp1_model.params["s"])
        assert np.allclose(second.Q, 0.0, atol=1e-10)

    @pytest.mark.parametrize("symmetrize", [False, True])
    def test_regression_backend_on_nonaffine_model(self, tp3_model, tp3_ensemble, symmetrize):
        config = AdjointConfig(backend="regression", symmetrize=symmetrize)
        first = solve_first_adjoint(tp3_model, tp3_ensemble, config)
        second = solve_second_adjoint(tp3_model, tp3_ensemble, first, config)
        assert np.all(np.isfinite(second.P))

    def test_symmetrize_is_identity_in_one_dimension(self, tp3_model, tp3_ensemble):
        plain_cfg = AdjointConfig(backend="regression")
        sym_cfg = AdjointConfig(backend="regression", symmetrize=True)
        first = solve_first_adjoint(tp3_model, tp3_ensemble, plain_cfg)
        plain = solve_second_adjoint(tp3_model, tp3_ensemble, first, plain_cfg)
        sym = solve_second_adjoint(tp3_model, tp3_ensemble, first, sym_cfg)
        assert np.allclose(plain.P, sym.P)
