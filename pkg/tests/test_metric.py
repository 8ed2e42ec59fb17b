"""Tests for the weighted distance between pair-adjoint iterates."""

import dataclasses

import numpy as np
import pytest

from mv_maxprinciple.adjoint.metric import rho_metric, rho_profile
from mv_maxprinciple.adjoint.third import ProductAdjoint
from mv_maxprinciple.exceptions import DimensionError
from mv_maxprinciple.forward.grid import TimeGrid


@pytest.fixture
def zero():
    return ProductAdjoint.zeros(TimeGrid(horizon=1.0, steps=10), 3, np.arange(4), 1)


class TestRhoProfile:
    def test_identical_iterates(self, zero):
        assert rho_metric(zero, zero, kappa=10.0) == 0.0

    def test_sup_term_picks_weighted_maximum(self, zero):
        shifted = dataclasses.replace(zero, P=zero.P + 1.0)
        profile = rho_profile(shifted, zero)
        assert np.allclose(profile.p_sq, 1.0)
        assert profile.rho(2.0) == pytest.approx(np.exp(2.0))
        assert profile.rho(0.0) == pytest.approx(1.0)

    def test_integral_term(self, zero):
        shifted = dataclasses.replace(zero, Q1=zero.Q1 + 1.0, Q2=zero.Q2 + 1.0)
        profile = rho_profile(shifted, zero)
        assert np.allclose(profile.q_sq, 2.0)
        # 0.75 * sum_k dt * 2 over ten cells with unit weights.
        assert profile.rho(0.0) == pytest.approx(0.75 * 2.0)

    def test_larger_kappa_weights_late_times(self, zero):
        late = zero.P.copy()
        late[:, :, -1] = 1.0
        early = zero.P.copy()
        early[:, :, 0] = 1.0
        rho_late = rho_metric(dataclasses.replace(zero, P=late), zero, 5.0)
        rho_early = rho_metric(dataclasses.replace(zero, P=early), zero, 5.0)
        assert rho_late > rho_early

    def test_shape_mismatch(self, zero):
        other = ProductAdjoint.zeros(zero.grid, 2, np.arange(4), 1)
        with pytest.raises(DimensionError, match="shapes differ"):
            rho_profile(zero, other)
