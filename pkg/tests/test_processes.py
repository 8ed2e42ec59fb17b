"""Tests for the first and second variational processes."""

import numpy as np
import pytest

from mv_maxprinciple.exceptions import ControlError, DimensionError
from mv_maxprinciple.forward.controls import ConstantControl, ShiftedControl, SpikeVariation
from mv_maxprinciple.forward.ensemble import simulate_mv_sde
from mv_maxprinciple.variational.processes import (
    build_bundle,
    knot_sources,
    moves_diffusion,
    simulate_first_variation,
    simulate_second_variation,
    spike_table,
)
from mv_maxprinciple.variational.study import sup_moment

SEED = 20240601


@pytest.fixture
def tp1_spike():
    return SpikeVariation(t0=0.25, eps=0.1, beta=ShiftedControl(ConstantControl(0.0), 1.0))


class TestSpikeTable:
    def test_beta_on_spike_cells_only(self, tp1_ensemble, tp1_spike):
        table = spike_table(tp1_ensemble, tp1_spike)
        assert (table.k0, table.k1) == (5, 7)
        assert np.all(table.table[:, 5:7] == 1.0)
        assert np.all(table.table[:, :5] == 0.0)
        assert np.all(table.table[:, 7:] == 0.0)
        assert table.active(6) and not table.active(7)

    def test_sources_carry_increment_on_spike_cells(self, tp1_model, tp1_ensemble, tp1_spike):
        table = spike_table(tp1_ensemble, tp1_spike)
        assert knot_sources(tp1_model, tp1_ensemble, table, 4).delta is None
        src = knot_sources(tp1_model, tp1_ensemble, table, 5)
        assert np.allclose(src.delta.A.value, tp1_model.params["b"])


class TestLinearProblem:
    def test_first_variation_is_exact(self, tp1_model, tp1_ensemble, tp1_spike):
        bundle = build_bundle(tp1_model, tp1_ensemble, tp1_spike)
        assert np.allclose(bundle.delta_x, bundle.Y, atol=1e-12)
        assert np.allclose(bundle.Z, 0.0, atol=1e-14)
        assert np.allclose(bundle.defect, 0.0, atol=1e-12)

    def test_zero_before_spike(self, tp1_model, tp1_ensemble, tp1_spike):
        Y = simulate_first_variation(tp1_model, tp1_ensemble, tp1_spike)
        assert np.all(Y[:, :6] == 0.0)
        assert np.all(Y[:, 6] != 0.0)

    def test_spiked_path_shares_noise(self, tp1_model, tp1_ensemble, tp1_spike):
        bundle = build_bundle(tp1_model, tp1_ensemble, tp1_spike)
        assert np.array_equal(bundle.spiked.dW, tp1_ensemble.dW)
        assert np.array_equal(bundle.spiked.states[:, :6], tp1_ensemble.states[:, :6])


class TestNonlinearProblem:
    def test_second_order_defect_is_small(self, tp3_model, tp3_ensemble):
        base = tp3_ensemble.open_loop()
        spike = SpikeVariation(t0=0.25, eps=0.05, beta=ShiftedControl(base, 0.5))
        bundle = build_bundle(tp3_model, tp3_ensemble, spike)
        y_size, _ = sup_moment(bundle.Y, 1)
        gap, _ = sup_moment(bundle.delta_x - bundle.Y, 1)
        defect, _ = sup_moment(bundle.defect, 1)
        assert y_size > 0
        assert gap < y_size
        assert defect < gap

    def test_second_variation_checks_shape(self, tp3_model, tp3_ensemble):
        spike = SpikeVariation(t0=0.0, eps=0.05, beta=ConstantControl(1.0))
        with pytest.raises(DimensionError, match="Y must have shape"):
            simulate_second_variation(tp3_model, tp3_ensemble, spike, np.zeros((3, 3, 1)))


class TestMovesDiffusion:
    def test_drift_spike(self, tp1_model, tp1_ensemble, tp1_spike):
        assert not moves_diffusion(tp1_model, tp1_ensemble, tp1_spike)

    def test_diffusion_spike(self, tp2_model, grid):
        base = simulate_mv_sde(tp2_model, grid, ConstantControl(1.0), [0.5], 30, seed=SEED)
        spike = SpikeVariation(t0=0.0, eps=0.1, beta=ConstantControl(-1.0))
        assert moves_diffusion(tp2_model, base, spike)


class TestAdmissibility:
    def test_spike_outside_control_set(self, tp2_model, grid):
        base = simulate_mv_sde(tp2_model, grid, ConstantControl(1.0), [0.5], 30, seed=SEED)
        spike = SpikeVariation(t0=0.0, eps=0.1, beta=ConstantControl(0.5))
        with pytest.raises(ControlError):
            simulate_first_variation(tp2_model, base, spike)
