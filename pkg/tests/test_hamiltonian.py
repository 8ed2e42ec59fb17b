"""Tests for the Hamiltonian and its Lions derivative forms."""

import numpy as np
import pytest

from mv_maxprinciple.coeffs.hamiltonian import COST_SIGN, PRINTED_SIGN, hamiltonian
from mv_maxprinciple.exceptions import ControlError, DimensionError


def _args(n=5, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, 1)), rng.normal(size=n), rng.normal(size=(n, 1)), rng.normal(size=(n, 1, 1))


class TestHamiltonian:
    def test_value_printed_sign(self, tp1_model):
        x, u, p, q = _args()
        m = np.array([0.3])
        pr = tp1_model.params
        H = hamiltonian(tp1_model, 0.0, x, m, u, p, q)
        A = pr["a"] * x[:, 0] + pr["abar"] * m[0] + pr["b"] * u
        f = 0.5 * (pr["r"] * u**2 + pr["c"] * x[:, 0] ** 2 + pr["cbar"] * m[0] ** 2)
        expected = A * p[:, 0] + pr["sigma"] * q[:, 0, 0] - f
        assert np.allclose(H.value, expected)

    def test_cost_sign_flips_running_cost(self, tp1_model):
        x, u, p, q = _args()
        m = np.array([0.3])
        printed = hamiltonian(tp1_model, 0.0, x, m, u, p, q, cost_sign=PRINTED_SIGN)
        cost = hamiltonian(tp1_model, 0.0, x, m, u, p, q, cost_sign=COST_SIGN)
        f = tp1_model.f.value(0.0, x, m, u)
        assert np.allclose(cost.value - printed.value, 2.0 * f)
        assert np.allclose(cost.H_xx[:, 0, 0], tp1_model.params["c"])

    def test_measure_forms(self, tp3_model):
        x, u, p, q = _args(4)
        m = np.array([0.2, 1.1])
        H = hamiltonian(tp3_model, 0.5, x, m, u, p, q, cost_sign=COST_SIGN)
        y = np.full((4, 1), 2.0)
        # psi = (x, x^2): Dpsi(y) = (1, 2y), D^2 psi(y) = (0, 2)
        assert np.allclose(H.H_mu(y)[:, 0], H.H_m[:, 0] + 4.0 * H.H_m[:, 1])
        assert np.allclose(H.H_ymu(y)[:, 0, 0], 2.0 * H.H_m[:, 1])
        dpsi = np.array([1.0, 4.0])
        assert np.allclose(H.H_mumu(y, y)[:, 0, 0], np.einsum("k,nkl,l->n", dpsi, H.H_mm, dpsi))
        assert H.H_xmu(y).shape == (4, 1, 1)

    def test_rejects_control_outside_u(self, tp2_model):
        x, _, p, q = _args(3)
        with pytest.raises(ControlError):
            hamiltonian(tp2_model, 0.0, x, np.array([0.0]), np.zeros(3), p, q)

    def test_rejects_shape_mismatch(self, tp1_model):
        x, u, p, q = _args(3)
        with pytest.raises(DimensionError, match="expected"):
            hamiltonian(tp1_model, 0.0, x, np.array([0.0]), u, p[:2], q)
