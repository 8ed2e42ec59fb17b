"""Moment maps psi: R^d -> R^K through which every coefficient sees the measure argument."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from ..exceptions import DimensionError, NumericError

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MomentMap:
    """psi with its Jacobian and per-coordinate Hessians, all batched over leading axes.

    ``psi(x)`` maps (..., d) to (..., K), ``dpsi(x)`` to (..., K, d) and
    ``d2psi(x)`` to (..., K, d, d).
    """

    K: int
    d: int
    psi: ArrayFn
    dpsi: ArrayFn
    d2psi: ArrayFn
    name: str = "custom"

    def mean(self, states: np.ndarray) -> np.ndarray:
        """Empirical moment vector (1/N) sum_i psi(X^i)."""
        states = np.asarray(states, dtype=float)
        if states.ndim != 2 or states.shape[1] != self.d:
            raise DimensionError(f"states must have shape (N, {self.d}), got {states.shape}")
        if states.shape[0] == 0:
            raise DimensionError("empirical moments of an empty ensemble are undefined")
        if not np.all(np.isfinite(states)):
            raise NumericError("non-finite state in moment evaluation")
        return self.psi(states).mean(axis=0)


def identity_moments(d: int = 1) -> MomentMap:
    """psi(x) = x, so m is the mean vector."""
    eye = np.eye(d)

    def psi(x: np.ndarray) -> np.ndarray:
        return np.array(x, dtype=float, copy=True)

    def dpsi(x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(eye, x.shape[:-1] + (d, d)).copy()

    def d2psi(x: np.ndarray) -> np.ndarray:
        return np.zeros(x.shape[:-1] + (d, d, d))

    return MomentMap(K=d, d=d, psi=psi, dpsi=dpsi, d2psi=d2psi, name="identity")


def power_moments(powers: tuple[int, ...]) -> MomentMap:
    """Scalar state, psi(x) = (x^p1, x^p2, ...)."""
    if not powers or any(p < 1 for p in powers):
        raise DimensionError("powers must be a non-empty tuple of positive integers")
    exps = np.asarray(powers, dtype=float)

    def psi(x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) ** exps

    def dpsi(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = exps * x ** np.maximum(exps - 1.0, 0.0)
        return out[..., None]

    def d2psi(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = exps * (exps - 1.0) * x ** np.maximum(exps - 2.0, 0.0)
        return out[..., None, None]

    label = ",".join(f"x^{p}" for p in powers)
    return MomentMap(K=len(powers), d=1, psi=psi, dpsi=dpsi, d2psi=d2psi, name=f"powers({label})")


def check_moment_map(
    momentmap: MomentMap,
    rng: np.random.Generator,
    points: int = 100,
    h: float = 1e-5,
) -> dict[str, float]:
    """Max relative error of dpsi and d2psi against central differences on [-2, 2]^d."""
    x = rng.uniform(-2.0, 2.0, size=(points, momentmap.d))
    jac_fd = np.empty((points, momentmap.K, momentmap.d))
    hess_fd = np.empty((points, momentmap.K, momentmap.d, momentmap.d))
    for c in range(momentmap.d):
        step = np.zeros(momentmap.d)
        step[c] = h
        jac_fd[..., c] = (momentmap.psi(x + step) - momentmap.psi(x - step)) / (2 * h)
        hess_fd[..., c] = (momentmap.dpsi(x + step) - momentmap.dpsi(x - step)) / (2 * h)
    return {
        "dpsi": relative_error(momentmap.dpsi(x), jac_fd),
        "d2psi": relative_error(momentmap.d2psi(x), hess_fd),
    }


def relative_error(analytic: np.ndarray, reference: np.ndarray) -> float:
    scale = np.maximum(1.0, np.abs(reference))
    return float(np.max(np.abs(analytic - reference) / scale)) if analytic.size else 0.0
