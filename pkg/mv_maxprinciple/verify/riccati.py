"""Closed-form references for the scalar mean-field linear-quadratic problem.

For A = a x + abar m + b u, B = sigma, f = (r u^2 + c x^2 + cbar m^2) / 2 and
g = (s x^2 + sbar m^2) / 2 the optimal feedback is
u = -(b / r) (Pi (x - m) + Lam m), where Pi and Lam solve scalar Riccati
equations backward from s and s + sbar. The adjoints along the optimum are
affine in the state and are available from the same ODE system.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from ..exceptions import ArgumentError, NumericError

logger = logging.getLogger(__name__)

ODE_RTOL = 1e-10
ODE_ATOL = 1e-12
LQ_KEYS = ("a", "abar", "b", "sigma", "r", "c", "cbar", "s", "sbar")
NON_LQ_KEYS = ("a0", "e", "h", "sigma_x", "sigma_u", "f0", "k_u", "g1")


@dataclass(frozen=True)
class LQParams:
    a: float
    abar: float
    b: float
    sigma: float
    r: float
    c: float
    cbar: float
    s: float
    sbar: float

    @classmethod
    def from_params(cls, params: dict[str, float]) -> LQParams:
        missing = [k for k in LQ_KEYS if k not in params]
        if missing:
            raise ArgumentError(f"not a mean-field LQ parameter set; missing {', '.join(missing)}")
        extra = [k for k in NON_LQ_KEYS if params.get(k, 0.0) != 0.0]
        if extra:
            raise ArgumentError(f"Riccati reference needs {', '.join(extra)} = 0")
        if params["r"] <= 0:
            raise ArgumentError("Riccati reference needs r > 0")
        return cls(**{k: float(params[k]) for k in LQ_KEYS})


class MeanFieldRiccati:
    """Backward ODE system y = (Pi, Lam, P, PP, I) on [0, T], with I(t) = int_t^T Pi."""

    def __init__(self, params: LQParams, horizon: float):
        if horizon <= 0:
            raise ArgumentError(f"horizon must be > 0, got {horizon}")
        self.params = params
        self.horizon = horizon
        p = params
        gain = p.b**2 / p.r

        def rhs(t: float, y: np.ndarray) -> np.ndarray:
            pi, lam, P, PP, _ = y
            return np.array([
                -2.0 * p.a * pi + gain * pi**2 - p.c,
                -2.0 * (p.a + p.abar) * lam + gain * lam**2 - (p.c + p.cbar),
                -(2.0 * p.a * P + p.c),
                -(2.0 * (p.a + p.abar) * PP + p.cbar + 2.0 * p.abar * P),
                -pi,
            ])

        terminal = np.array([p.s, p.s + p.sbar, p.s, p.sbar, 0.0])
        sol = solve_ivp(rhs, [horizon, 0.0], terminal, dense_output=True, rtol=ODE_RTOL, atol=ODE_ATOL)
        if not sol.success or not np.all(np.isfinite(sol.y)):
            raise NumericError(f"Riccati integration failed: {sol.message}")
        self._backward = sol.sol

        def mean_rhs(t: float, y: np.ndarray) -> np.ndarray:
            return (p.a + p.abar - gain * self._backward(t)[1]) * y

        self._mean_rhs = mean_rhs
        logger.debug("Integrated Riccati system on [0, %g]", horizon)

    @classmethod
    def from_params(cls, params: dict[str, float], horizon: float) -> MeanFieldRiccati:
        return cls(LQParams.from_params(params), horizon)

    def _at(self, t: float | np.ndarray, index: int) -> np.ndarray:
        return np.asarray(self._backward(np.asarray(t, dtype=float)))[index]

    def pi(self, t: float | np.ndarray) -> np.ndarray:
        return self._at(t, 0)

    def lam(self, t: float | np.ndarray) -> np.ndarray:
        return self._at(t, 1)

    def second_order(self, t: float | np.ndarray) -> np.ndarray:
        """P(t): dP = -(2aP + c) dt, P(T) = s."""
        return self._at(t, 2)

    def pair_order(self, t: float | np.ndarray) -> np.ndarray:
        """Deterministic pair adjoint: dPP = -(2(a + abar) PP + cbar + 2 abar P) dt, PP(T) = sbar."""
        return self._at(t, 3)

    def feedback(self, t: float, x: np.ndarray, m: np.ndarray) -> np.ndarray:
        """Optimal control at the empirical mean m[0]."""
        p = self.params
        x1 = np.asarray(x)[:, 0]
        mean = float(np.asarray(m)[0])
        return -(p.b / p.r) * (self.pi(t) * (x1 - mean) + self.lam(t) * mean)

    def first_order(self, t: float, x: np.ndarray, m: float) -> np.ndarray:
        """p_t = Pi (X - m) + Lam m."""
        return self.pi(t) * (np.asarray(x) - m) + self.lam(t) * m

    def value(self, x0: float) -> float:
        """Optimal cost from a deterministic start: Lam(0) x0^2 / 2 + sigma^2 int_0^T Pi / 2."""
        integral = float(self._at(0.0, 4))
        return 0.5 * float(self.lam(0.0)) * x0**2 + 0.5 * self.params.sigma**2 * integral

    def mean_path(self, x0: float, times: np.ndarray) -> np.ndarray:
        """E[X_t] under the optimal feedback."""
        times = np.asarray(times, dtype=float)
        sol = solve_ivp(self._mean_rhs, [0.0, self.horizon], [x0], t_eval=times, rtol=ODE_RTOL, atol=ODE_ATOL)
        if not sol.success:
            raise NumericError(f"mean ODE integration failed: {sol.message}")
        return sol.y[0]


def linear_bsde_oracle(a: float, sigma: float, horizon: float, t: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(p, q) for A = a x, B = sigma, f = 0, g = x^2 / 2: p = e^{2a(T-t)} X, q = sigma e^{2a(T-t)}."""
    growth = np.exp(2.0 * a * (horizon - np.asarray(t, dtype=float)))
    return growth * x, sigma * growth * np.ones_like(x)


def discrete_mean_path(riccati: MeanFieldRiccati, x0: float, knots: np.ndarray) -> np.ndarray:
    """Exact expectation of the Euler particle mean under the optimal feedback on a uniform grid.

    The feedback sees the empirical mean, so the particle mean follows
    m_{k+1} = m_k (1 + (a + abar - b^2 Lam(t_k) / r) dt) plus pure noise.
    """
    p = riccati.params
    knots = np.asarray(knots, dtype=float)
    dt = np.diff(knots)
    rate = p.a + p.abar - p.b**2 * riccati.lam(knots[:-1]) / p.r
    return x0 * np.concatenate([[1.0], np.cumprod(1.0 + rate * dt)])


def _implicit_backward(terminal: float, rate: float, source: np.ndarray, dt: np.ndarray) -> np.ndarray:
    """y_k = (y_{k+1} + source_k dt_k) / (1 - rate dt_k), the backward Euler step the adjoint solvers take."""
    y = np.empty(len(dt) + 1)
    y[-1] = terminal
    for k in range(len(dt) - 1, -1, -1):
        y[k] = (y[k + 1] + source[k] * dt[k]) / (1.0 - rate * dt[k])
    return y


def discrete_second_order(riccati: MeanFieldRiccati, knots: np.ndarray) -> np.ndarray:
    """Second-order adjoint of the backward Euler scheme on the given grid: P_T = s, rate 2a, source c."""
    p = riccati.params
    dt = np.diff(np.asarray(knots, dtype=float))
    return _implicit_backward(p.s, 2.0 * p.a, np.full(len(dt), p.c), dt)


def discrete_pair_order(riccati: MeanFieldRiccati, knots: np.ndarray) -> np.ndarray:
    """Pair adjoint of the backward Euler scheme: rate 2(a + abar), source cbar + 2 abar P_k with the discrete P."""
    p = riccati.params
    dt = np.diff(np.asarray(knots, dtype=float))
    second = discrete_second_order(riccati, knots)
    return _implicit_backward(p.sbar, 2.0 * (p.a + p.abar), p.cbar + 2.0 * p.abar * second[:-1], dt)
