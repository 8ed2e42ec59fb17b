"""Lions derivatives of moment functionals phi(mu) = F(<psi, mu>) and their validators."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from ..exceptions import ArgumentError, DimensionError, NumericError
from .moments import MomentMap

OuterFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MomentFunctional:
    """phi(mu) = F(m) with m = <psi, mu>; F maps R^K to R with gradient and Hessian."""

    momentmap: MomentMap
    F: Callable[[np.ndarray], float]
    dF: OuterFn
    d2F: OuterFn
    name: str = "phi"

    def __call__(self, states: np.ndarray) -> float:
        return float(self.F(self.momentmap.mean(states)))


@dataclass(frozen=True)
class TaylorTerms:
    first: float
    second_mixed: float
    second_y: float
    remainder: float

    @property
    def increment(self) -> float:
        return self.first + self.second_mixed + self.second_y + self.remainder


def _checked_states(states: np.ndarray, d: int) -> np.ndarray:
    states = np.asarray(states, dtype=float)
    if states.ndim != 2 or states.shape[1] != d:
        raise DimensionError(f"ensemble states must have shape (N, {d}), got {states.shape}")
    if states.shape[0] == 0:
        raise DimensionError("ensemble is empty")
    if not np.all(np.isfinite(states)):
        raise NumericError("ensemble contains non-finite states")
    return states


def lions_derivative(phi: MomentFunctional, ensemble_states: np.ndarray, y: np.ndarray) -> np.ndarray:
    """d_mu phi(mu_N)(y) = grad F(m) . Dpsi(y) under the empirical measure; returns a d-vector."""
    mm = phi.momentmap
    states = _checked_states(ensemble_states, mm.d)
    y = np.asarray(y, dtype=float).reshape(mm.d)
    if not np.all(np.isfinite(y)):
        raise NumericError("evaluation point y is not finite")
    grad = np.asarray(phi.dF(mm.mean(states)), dtype=float)
    return grad @ mm.dpsi(y[None, :])[0]


def check_lions_fd(
    phi: MomentFunctional,
    ensemble_states: np.ndarray,
    direction: np.ndarray,
    h: float,
) -> float:
    """Compare (1/N) sum_i d_mu phi(X^i) Y^i with the central difference of the lifted map."""
    if h <= 0:
        raise ArgumentError(f"finite-difference step must be > 0, got {h}")
    mm = phi.momentmap
    states = _checked_states(ensemble_states, mm.d)
    direction = np.asarray(direction, dtype=float)
    if direction.shape != states.shape:
        raise DimensionError("direction must match the ensemble shape")

    grad = np.asarray(phi.dF(mm.mean(states)), dtype=float)
    analytic = float(np.mean(np.einsum("k,nkd,nd->n", grad, mm.dpsi(states), direction)))
    fd = (phi(states + h * direction) - phi(states - h * direction)) / (2 * h)
    return abs(analytic - fd) / max(1.0, abs(fd))


def taylor_expand_measure(
    phi: MomentFunctional,
    base_states: np.ndarray,
    new_states: np.ndarray,
) -> TaylorTerms:
    """Second-order expansion of phi along the increment eta = new - base.

    The mixed term averages the kernel d2_mu phi(X^i, X^j)[eta^i, eta^j] over
    all N x N pairs; the remainder is whatever the three terms miss.
    """
    mm = phi.momentmap
    base = _checked_states(base_states, mm.d)
    new = _checked_states(new_states, mm.d)
    if base.shape != new.shape:
        raise DimensionError(f"ensembles differ in shape: {base.shape} vs {new.shape}")

    eta = new - base
    m0 = mm.mean(base)
    grad = np.asarray(phi.dF(m0), dtype=float)
    hess = np.asarray(phi.d2F(m0), dtype=float)
    dpsi = mm.dpsi(base)

    first = float(np.mean(np.einsum("k,nkd,nd->n", grad, dpsi, eta)))
    lifted = np.einsum("nkd,nd->nk", dpsi, eta)  # Dpsi(X^i) eta^i
    pair_kernel = np.einsum("ik,kl,jl->ij", lifted, hess, lifted)
    second_mixed = 0.5 * float(pair_kernel.mean())
    second_y = 0.5 * float(np.mean(np.einsum("k,nkab,na,nb->n", grad, mm.d2psi(base), eta, eta)))

    increment = phi(new) - phi(base)
    remainder = increment - first - second_mixed - second_y
    return TaylorTerms(first=first, second_mixed=second_mixed, second_y=second_y, remainder=remainder)


def remainder_scale(base_states: np.ndarray, new_states: np.ndarray) -> float:
    """(E|eta|^2)^{3/2} + E|eta|^3, the size the expansion remainder is bounded by."""
    eta = np.asarray(new_states, dtype=float) - np.asarray(base_states, dtype=float)
    norms = np.linalg.norm(eta, axis=-1)
    return float(np.mean(norms**2) ** 1.5 + np.mean(norms**3))


def measure_lipschitz_ratio(phi: MomentFunctional, states_a: np.ndarray, states_b: np.ndarray,
                            y: np.ndarray) -> float:
    """|d_mu phi(m_a)(y) - d_mu phi(m_b)(y)| / |m_a - m_b| for two ensembles."""
    mm = phi.momentmap
    gap = np.linalg.norm(mm.mean(states_a) - mm.mean(states_b))
    if gap == 0:
        return 0.0
    diff = lions_derivative(phi, states_a, y) - lions_derivative(phi, states_b, y)
    return float(np.linalg.norm(diff) / gap)


def scalar_functional(momentmap: MomentMap, F: Callable[[float], float],
                      dF: Callable[[float], float], d2F: Callable[[float], float],
                      name: str = "phi") -> MomentFunctional:
    """Wrap a scalar outer function of a one-dimensional moment."""
    if momentmap.K != 1:
        raise DimensionError("scalar_functional needs a one-dimensional moment map")
    return MomentFunctional(
        momentmap=momentmap,
        F=lambda m: float(F(float(m[0]))),
        dF=lambda m: np.array([dF(float(m[0]))]),
        d2F=lambda m: np.array([[d2F(float(m[0]))]]),
        name=name,
    )


def sine_functional(momentmap: MomentMap) -> MomentFunctional:
    """F(m) = sum_k sin(m_k) + |m|^2 / 2, a smooth functional touching every moment."""
    return MomentFunctional(
        momentmap=momentmap,
        F=lambda m: float(np.sum(np.sin(m)) + 0.5 * m @ m),
        dF=lambda m: np.cos(m) + m,
        d2F=lambda m: np.diag(1.0 - np.sin(m)),
        name="sine",
    )
