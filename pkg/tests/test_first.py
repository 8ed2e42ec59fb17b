"""Tests for the first-order adjoint (p, q)."""

import numpy as np
import pytest

from mv_maxprinciple.adjoint.first import first_terminal, solve_first_adjoint
from mv_maxprinciple.coeffs.problems import polynomial_model
from mv_maxprinciple.config import AdjointConfig
from mv_maxprinciple.exceptions import SolverError
from mv_maxprinciple.forward.controls import ConstantControl, FeedbackControl
from mv_maxprinciple.forward.ensemble import simulate_mv_sde
from mv_maxprinciple.forward.grid import TimeGrid
from mv_maxprinciple.verify.riccati import MeanFieldRiccati, linear_bsde_oracle

SEED = 20240601


def _relative(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


@pytest.fixture
def linear_ensemble(linear_model, grid):
    return simulate_mv_sde(linear_model, grid, ConstantControl(0.0), [1.0], 100, seed=SEED)


class TestTerminal:
    def test_includes_measure_derivative(self, tp1_model, tp1_ensemble):
        x = tp1_ensemble.states[:, -1, 0]
        params = tp1_model.params
        expected = params["s"] * x + params["sbar"] * x.mean()
        assert np.allclose(first_terminal(tp1_model, tp1_ensemble)[:, 0], expected)


class TestLinearOracle:
    def test_deterministic_backend(self, linear_model, linear_ensemble):
        first = solve_first_adjoint(linear_model, linear_ensemble, AdjointConfig(backend="deterministic"))
        grid = linear_ensemble.grid
        a, sigma = linear_model.params["a"], linear_model.params["sigma"]
        x = linear_ensemble.states[:, :, 0]
        p_ref, _ = linear_bsde_oracle(a, sigma, grid.horizon, grid.knots, x)
        assert _relative(first.p[:, :, 0], p_ref) < 1e-3
        # q on cell k is the integrand of p_{k+1}, so it lines up with the right knot.
        _, q_ref = linear_bsde_oracle(a, sigma, grid.horizon, grid.knots[1:], x[:, 1:])
        assert _relative(first.q[:, :, 0, 0], q_ref) < 1e-3

    def test_regression_backend(self, linear_model):
        grid = TimeGrid(horizon=1.0, steps=50)
        ens = simulate_mv_sde(linear_model, grid, ConstantControl(0.0), [1.0], 2000, seed=SEED)
        first = solve_first_adjoint(linear_model, ens, AdjointConfig(backend="regression"))
        x = ens.states[:, :, 0]
        p_ref, _ = linear_bsde_oracle(linear_model.params["a"], linear_model.params["sigma"], 1.0, grid.knots, x)
        assert _relative(first.p[:, :, 0], p_ref) < 0.02

    def test_shapes(self, linear_model, linear_ensemble):
        first = solve_first_adjoint(linear_model, linear_ensemble)
        steps = linear_ensemble.grid.steps
        assert first.p.shape == (100, steps + 1, 1)
        assert first.q.shape == (100, steps, 1, 1)
        assert np.array_equal(first.q_at(steps), first.q[:, steps - 1])


class TestRiccatiOracle:
    def test_optimal_feedback(self, tp1_model):
        grid = TimeGrid(horizon=1.0, steps=200)
        riccati = MeanFieldRiccati.from_params(tp1_model.params, grid.horizon)
        ens = simulate_mv_sde(tp1_model, grid, FeedbackControl(riccati.feedback), [1.0], 300, seed=SEED)
        first = solve_first_adjoint(tp1_model, ens)
        ref = np.stack(
            [riccati.first_order(t, ens.states[:, k, 0], ens.moments[k, 0]) for k, t in enumerate(grid.knots)],
            axis=1,
        )
        assert _relative(first.p[:, :, 0], ref) < 0.02


class TestBackendChoice:
    def test_nonaffine_model_needs_regression(self, tp3_model, tp3_ensemble):
        with pytest.raises(SolverError, match="state-affine"):
            solve_first_adjoint(tp3_model, tp3_ensemble, AdjointConfig(backend="deterministic"))

    def test_regression_on_nonaffine_model(self, tp3_model, tp3_ensemble):
        first = solve_first_adjoint(tp3_model, tp3_ensemble, AdjointConfig(backend="regression"))
        assert np.all(np.isfinite(first.p))
        assert np.all(np.isfinite(first.q))


class TestStiffStep:
    def test_coarse_grid_raises_with_step(self):
        # a * dt = 1.5, so the fixed-point sweeps of the implicit step diverge
        model = polynomial_model({"a": 15.0, "sigma": 0.3, "s": 1.0}, name="stiff")
        ens = simulate_mv_sde(model, TimeGrid(horizon=1.0, steps=10), ConstantControl(0.0), [1.0], 20, seed=SEED)
        with pytest.raises(SolverError, match="sweeps") as info:
            solve_first_adjoint(model, ens)
        assert info.value.step == 9
