"""Conditional projections E_k[.] and E_k[. dW_k^T]/dt for backward Euler schemes.

A projector works on the conditioning process z of the scheme: the particle
states for single-ensemble adjoints, or the concatenated pair state
(X^i, Xhat^j) on the product space. Targets sampled at knot k+1 come back
as their conditional mean at knot k together with the martingale
integrand estimate.
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass
from typing import Protocol

import numpy as np
import scipy.linalg

from ..coeffs.model import CoefficientModel
from ..exceptions import ArgumentError, SolverError
from ..forward.ensemble import ParticleEnsemble, theta_at
from .regression import RegressionBasis, regress_conditional

logger = logging.getLogger(__name__)

AFFINE_TOL = 1e-8


@dataclass(frozen=True)
class Increment:
    """Conditioning process over one cell: dz = drift dt + diffusion dW."""

    z: np.ndarray  # (n, r) at knot k
    z_next: np.ndarray  # (n, r) at knot k+1
    drift: np.ndarray  # (n, r)
    diffusion: np.ndarray  # (n, r, w)
    dW: np.ndarray  # (n, w)


class ConditioningPath(Protocol):
    dt: float

    def at(self, k: int) -> Increment: ...


class EnsemblePath:
    """Particle states with drift A(theta_k) and diffusion B(theta_k) along the realized controls."""

    def __init__(self, model: CoefficientModel, ensemble: ParticleEnsemble):
        self.ensemble = ensemble
        self.dt = ensemble.grid.dt
        steps = ensemble.grid.steps
        self.drift = np.empty((ensemble.N, steps, ensemble.d))
        self.diffusion = np.empty((ensemble.N, steps, ensemble.d, ensemble.d))
        for k in range(steps):
            theta = theta_at(model, ensemble, k)
            self.drift[:, k] = theta.A.value
            self.diffusion[:, k] = theta.B.value

    def at(self, k: int) -> Increment:
        s = self.ensemble.states
        return Increment(s[:, k], s[:, k + 1], self.drift[:, k], self.diffusion[:, k], self.ensemble.dW[:, k])


class PairPath:
    """Product-space pairs (i, j), flattened row-major as i * J + j, with independent noises."""

    def __init__(self, first: EnsemblePath, second: EnsemblePath, second_index: np.ndarray):
        self.first = first
        self.second = second
        self.index = np.asarray(second_index)
        self.dt = first.dt

    def at(self, k: int) -> Increment:
        a = self.first.at(k)
        b = self.second.at(k)
        n1, n2 = a.z.shape[0], self.index.shape[0]

        def pair(u: np.ndarray, v: np.ndarray) -> np.ndarray:
            left = np.repeat(u, n2, axis=0)
            right = np.tile(v[self.index], (n1,) + (1,) * (v.ndim - 1))
            return np.concatenate([left, right], axis=1)

        r1, w1 = a.diffusion.shape[1:]
        r2, w2 = b.diffusion.shape[1:]
        diffusion = np.zeros((n1 * n2, r1 + r2, w1 + w2))
        diffusion[:, :r1, :w1] = np.repeat(a.diffusion, n2, axis=0)
        diffusion[:, r1:, w1:] = np.tile(b.diffusion[self.index], (n1, 1, 1))
        return Increment(
            z=pair(a.z, b.z),
            z_next=pair(a.z_next, b.z_next),
            drift=pair(a.drift, b.drift),
            diffusion=diffusion,
            dW=pair(a.dW, b.dW),
        )


class ConditionalProjector(Protocol):
    def project(self, k: int, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(E_k[target], E_k[target dW_k^T] / dt) for a target sampled at knot k+1."""
        ...


class AffineProjector:
    """Exact projection for targets affine in the conditioning state.

    Fits target = Gamma z_{k+1} + c over the samples; then
    E_k[target] = Gamma (z_k + drift dt) + c and the integrand is Gamma diffusion.
    A fit residual above tolerance means the target is not affine: SolverError.
    """

    def __init__(self, path: ConditioningPath, tol: float = AFFINE_TOL):
        self.path = path
        self.tol = tol

    def project(self, k: int, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        inc = self.path.at(k)
        n = target.shape[0]
        flat = target.reshape(n, -1)
        design = np.concatenate([inc.z_next, np.ones((n, 1))], axis=1)
        coef, *_ = scipy.linalg.lstsq(design, flat)
        residual = np.max(np.abs(design @ coef - flat)) if flat.size else 0.0
        if residual > self.tol * max(1.0, float(np.max(np.abs(flat)))):
            raise SolverError(
                f"target is not affine in the state at step {k} (residual {residual:.3e}); "
                "use the regression backend",
                step=k,
            )
        gamma, intercept = coef[:-1].T, coef[-1]
        cond = (inc.z + inc.drift * self.path.dt) @ gamma.T + intercept
        integrand = np.einsum("sr,nrw->nsw", gamma, inc.diffusion)
        return cond.reshape(target.shape), integrand.reshape(target.shape + (inc.dW.shape[1],))


class RegressionProjector:
    """Least-squares Monte Carlo: regress targets and target * dW / dt on polynomials of z_k."""

    def __init__(self, path: ConditioningPath, basis: RegressionBasis):
        self.path = path
        self.basis = basis

    def project(self, k: int, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        inc = self.path.at(k)
        n = target.shape[0]
        flat = target.reshape(n, -1)
        try:
            cond = regress_conditional(flat, inc.z, self.basis).fitted
            weighted = (flat[:, :, None] * inc.dW[:, None, :] / self.path.dt).reshape(n, -1)
            integrand = regress_conditional(weighted, inc.z, self.basis).fitted
        except SolverError as exc:
            raise SolverError(f"regression failed at step {k}: {exc}", step=k) from exc
        return cond.reshape(target.shape), integrand.reshape(target.shape + (inc.dW.shape[1],))


def make_projector(
    backend: str,
    model: CoefficientModel,
    path: ConditioningPath,
    degree: int = 2,
    ridge: float = 1e-8,
) -> ConditionalProjector:
    if backend == "deterministic":
        if not model.state_affine:
            raise SolverError(f"deterministic backend needs a state-affine model; {model.name} is not")
        return AffineProjector(path)
    if backend == "regression":
        return RegressionProjector(path, RegressionBasis(degree=degree, ridge=ridge))
    raise ArgumentError(f"Unknown adjoint backend '{backend}'")


def implicit_step(
    cond: np.ndarray,
    driver: Callable[[np.ndarray], np.ndarray],
    dt: float,
    tol: float = 1e-12,
    max_sweeps: int = 50,
    step: int | None = None,
) -> np.ndarray:
    """Solve y = cond + dt * driver(y) by fixed-point sweeps started at cond.

    Running out of sweeps raises SolverError tagged with ``step``. A non-finite
    iterate is returned as is so the caller can report the divergence.
    """
    current = cond
    change = 0.0
    for sweep in range(1, max_sweeps + 1):
        updated = cond + dt * driver(current)
        if not np.all(np.isfinite(updated)):
            return updated
        change = float(np.max(np.abs(updated - current))) if updated.size else 0.0
        current = updated
        if change <= tol * max(1.0, float(np.max(np.abs(updated))) if updated.size else 1.0):
            return current
    where = f" at step {step}" if step is not None else ""
    raise SolverError(
        f"implicit step{where} did not settle in {max_sweeps} sweeps (last change {change:.3e}); "
        "reduce dt or raise max_sweeps",
        step=step,
    )
