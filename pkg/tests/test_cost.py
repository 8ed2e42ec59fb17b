"""Tests for the empirical cost functional."""

import numpy as np
import pytest

from mv_maxprinciple.exceptions import ArgumentError
from mv_maxprinciple.forward.controls import ConstantControl, LinearFeedback
from mv_maxprinciple.forward.ensemble import simulate_mv_sde
from mv_maxprinciple.forward.grid import TimeGrid
from mv_maxprinciple.verify.cost import cost_functional, cost_stderr, paired_cost_differences, particle_costs

SEED = 20240601


class TestParticleCosts:
    def test_terminal_only(self, linear_model, grid):
        ens = simulate_mv_sde(linear_model, grid, ConstantControl(0.0), [1.0], 50, seed=SEED)
        assert np.allclose(particle_costs(linear_model, ens), 0.5 * ens.states[:, -1, 0] ** 2)

    def test_trapezoid_running_cost(self, tp1_model):
        grid = TimeGrid(1.0, 2)
        ens = simulate_mv_sde(tp1_model, grid, ConstantControl(0.5), [1.0], 4, seed=SEED)
        p = tp1_model.params
        x, m = ens.states[:, :, 0], ens.moments[:, 0]
        f = 0.5 * (p["r"] * 0.25 + p["c"] * x**2 + p["cbar"] * m**2)
        running = 0.5 * grid.dt * (f[:, 0] + 2.0 * f[:, 1] + f[:, 2])
        terminal = 0.5 * (p["s"] * x[:, 2] ** 2 + p["sbar"] * m[2] ** 2)
        assert np.allclose(particle_costs(tp1_model, ens), running + terminal)

    def test_mean_and_stderr(self, tp1_model, tp1_ensemble):
        costs = particle_costs(tp1_model, tp1_ensemble)
        assert cost_functional(tp1_model, tp1_ensemble) == pytest.approx(costs.mean())
        assert cost_stderr(tp1_model, tp1_ensemble) == pytest.approx(costs.std(ddof=1) / np.sqrt(costs.size))


class TestControlArgument:
    def test_law_reproduces_recorded_controls(self, tp1_model, grid):
        law = LinearFeedback(0.4)
        ens = simulate_mv_sde(tp1_model, grid, law, [1.0], 30, seed=SEED)
        assert cost_functional(tp1_model, ens, law) == pytest.approx(cost_functional(tp1_model, ens))

    def test_other_law_rejected(self, tp1_model, tp1_ensemble):
        with pytest.raises(ArgumentError, match="not simulated under"):
            cost_functional(tp1_model, tp1_ensemble, ConstantControl(0.3))


class TestPairedDifferences:
    def test_common_noise(self, tp1_model, grid, tp1_ensemble):
        shifted = simulate_mv_sde(tp1_model, grid, ConstantControl(0.1), [1.0], 200, seed=SEED)
        diff = paired_cost_differences(tp1_model, shifted, tp1_ensemble)
        assert diff.mean() == pytest.approx(
            cost_functional(tp1_model, shifted) - cost_functional(tp1_model, tp1_ensemble)
        )
        assert diff.std(ddof=1) / np.sqrt(diff.size) < cost_stderr(tp1_model, shifted)

    def test_same_ensemble_is_zero(self, tp1_model, tp1_ensemble):
        assert np.all(paired_cost_differences(tp1_model, tp1_ensemble, tp1_ensemble) == 0.0)

    def test_size_mismatch(self, tp1_model, grid, tp1_ensemble):
        small = simulate_mv_sde(tp1_model, grid, ConstantControl(0.0), [1.0], 10, seed=SEED)
        with pytest.raises(ArgumentError, match="equal size"):
            paired_cost_differences(tp1_model, small, tp1_ensemble)

    def test_needs_shared_noise(self, tp1_model, grid, tp1_ensemble):
        other = simulate_mv_sde(tp1_model, grid, ConstantControl(0.0), [1.0], 200, seed=SEED, namespace=3)
        with pytest.raises(ArgumentError, match="same noise"):
            paired_cost_differences(tp1_model, other, tp1_ensemble)
