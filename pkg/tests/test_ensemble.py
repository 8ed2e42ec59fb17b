"""Tests for the particle simulator and path export."""

import json

import numpy as np
import pytest

from mv_maxprinciple.coeffs.problems import polynomial_model
from mv_maxprinciple.exceptions import ControlError, DimensionError, DivergenceError
from mv_maxprinciple.forward.controls import ConstantControl, LinearFeedback
from mv_maxprinciple.forward.ensemble import simulate_mv_sde, terminal_at, theta_at, write_paths
from mv_maxprinciple.forward.grid import TimeGrid

SEED = 11


class TestSimulate:
    def test_shapes(self, tp1_ensemble, grid):
        ens = tp1_ensemble
        assert ens.states.shape == (200, grid.steps + 1, 1)
        assert ens.dW.shape == (200, grid.steps, 1)
        assert ens.moments.shape == (grid.steps + 1, 1)
        assert ens.controls.shape == (200, grid.steps)
        assert np.all(ens.states[:, 0] == 1.0)

    def test_moments_are_empirical(self, tp3_ensemble):
        k = 7
        x = tp3_ensemble.states[:, k, 0]
        assert np.allclose(tp3_ensemble.moments[k], [x.mean(), (x**2).mean()])

    def test_deterministic_given_seed(self, tp1_model, grid):
        a = simulate_mv_sde(tp1_model, grid, ConstantControl(0.0), [1.0], 50, seed=SEED)
        b = simulate_mv_sde(tp1_model, grid, ConstantControl(0.0), [1.0], 50, seed=SEED)
        assert np.array_equal(a.states, b.states)

    def test_independent_of_workers(self, tp3_model, grid):
        a = simulate_mv_sde(tp3_model, grid, LinearFeedback(0.5), [0.8], 60, seed=SEED, workers=1)
        b = simulate_mv_sde(tp3_model, grid, LinearFeedback(0.5), [0.8], 60, seed=SEED, workers=3)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.controls, b.controls)

    def test_namespaces_are_independent(self, tp1_model, grid):
        a = simulate_mv_sde(tp1_model, grid, ConstantControl(0.0), [1.0], 50, seed=SEED, namespace=0)
        b = simulate_mv_sde(tp1_model, grid, ConstantControl(0.0), [1.0], 50, seed=SEED, namespace=1)
        assert not np.array_equal(a.dW, b.dW)

    def test_reuses_noise(self, tp1_model, grid, tp1_ensemble):
        again = simulate_mv_sde(tp1_model, grid, ConstantControl(0.0), [1.0], 200, seed=0, dW=tp1_ensemble.dW)
        assert np.array_equal(again.states, tp1_ensemble.states)

    def test_mean_follows_linear_recursion(self, tp1_model, grid, tp1_ensemble):
        p = tp1_model.params
        expected = (1.0 + (p["a"] + p["abar"]) * grid.dt) ** grid.steps
        assert tp1_ensemble.moments[-1, 0] == pytest.approx(expected, abs=0.2)

    def test_rejects_control_outside_u(self, tp2_model, grid):
        with pytest.raises(ControlError):
            simulate_mv_sde(tp2_model, grid, ConstantControl(0.0), [0.5], 10, seed=SEED)

    def test_divergence_reports_step(self, grid):
        model = polynomial_model({"h": 1e150})
        with pytest.raises(DivergenceError) as info:
            simulate_mv_sde(model, grid, ConstantControl(0.0), [1.0], 4, seed=SEED)
        assert info.value.step is not None

    @pytest.mark.parametrize(
        "kwargs, message",
        [({"x0": [1.0, 2.0]}, "x0"), ({"particles": 1}, "2 particles"), ({"dW": np.zeros((3, 3, 1))}, "dW")],
    )
    def test_rejects_bad_arguments(self, tp1_model, grid, kwargs, message):
        args = {"x0": [1.0], "particles": 10, "seed": SEED, **kwargs}
        with pytest.raises(DimensionError, match=message):
            simulate_mv_sde(tp1_model, grid, ConstantControl(0.0), **args)


class TestPathHelpers:
    def test_theta_with_substituted_control(self, tp1_model, tp1_ensemble):
        theta = theta_at(tp1_model, tp1_ensemble, 3, controls=np.full(200, 2.0))
        base = theta_at(tp1_model, tp1_ensemble, 3)
        assert np.allclose(theta.A.value - base.A.value, 2.0 * tp1_model.params["b"])

    def test_terminal_values(self, tp1_model, tp1_ensemble):
        g = terminal_at(tp1_model, tp1_ensemble)
        x = tp1_ensemble.states[:, -1, 0]
        assert np.allclose(g.dx[:, 0], tp1_model.params["s"] * x)

    def test_control_at_terminal_knot(self, tp1_ensemble, grid):
        assert np.array_equal(tp1_ensemble.control_at(grid.steps), tp1_ensemble.controls[:, -1])


class TestWritePaths:
    def test_csv_and_sidecar(self, tmp_path, tp1_model):
        grid = TimeGrid(1.0, 3)
        ens = simulate_mv_sde(tp1_model, grid, ConstantControl(0.0), [1.0], 2, seed=SEED)
        csv_path, sidecar = write_paths(ens, tmp_path, "abc123")
        lines = csv_path.read_text().splitlines()
        assert lines[0] == "# config_hash=abc123"
        assert lines[2] == "particle,step,time,x_1"
        assert len(lines) == 3 + 2 * 4
        meta = json.loads(sidecar.read_text())
        assert meta["seed"] == SEED
        assert meta["config_hash"] == "abc123"
        assert meta["particles"] == 2
