"""Second-order adjoint (P, Q), the matrix-valued backward equation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..coeffs.model import CoefficientModel
from ..config import AdjointConfig
from ..exceptions import DivergenceError
from ..forward.ensemble import ParticleEnsemble, terminal_at, theta_at
from ..forward.grid import TimeGrid
from .first import FirstOrderAdjoint, hamiltonian_at
from .projection import EnsemblePath, implicit_step, make_projector

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SecondOrderAdjoint:
    grid: TimeGrid
    P: np.ndarray  # (N, M+1, d, d)
    Q: np.ndarray  # (N, M, d, d, d), Q[..., k] pairs with the k-th Brownian coordinate

    def Q_at(self, k: int) -> np.ndarray:
        return self.Q[:, min(k, self.grid.steps - 1)]


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, 1, 2))


def second_terminal(model: CoefficientModel, ensemble: ParticleEnsemble, symmetrize: bool = False) -> np.ndarray:
    """P_T = g_xx + sum_k E[g_m]_k D^2 psi_k(X_T)."""
    g = terminal_at(model, ensemble)
    d2psi = model.momentmap.d2psi(ensemble.states[:, -1, :])
    terminal = g.dxx + np.einsum("k,nkab->nab", g.dm.mean(axis=0), d2psi)
    return _sym(terminal) if symmetrize else terminal


def second_source(model: CoefficientModel, ensemble: ParticleEnsemble, k: int, first: FirstOrderAdjoint) -> np.ndarray:
    """H_xx(theta^i) + sum_k E[H_m]_k D^2 psi_k(X^i)."""
    H = hamiltonian_at(model, ensemble, k, first.p[:, k], first.q_at(k))
    d2psi = model.momentmap.d2psi(ensemble.states[:, k, :])
    return H.H_xx + np.einsum("k,nkab->nab", H.H_m.mean(axis=0), d2psi)


def homogeneous_terms(Ax: np.ndarray, Bx: np.ndarray, P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """A_x^T P + P A_x + sum_k (B_x^kT P B_x^k + B_x^kT Q^k + Q^k B_x^k).

    Ax is (N, a, x); Bx is (N, a, k, x) so that B_x^k = Bx[:, :, k, :].
    """
    return (
        np.einsum("nax,nay->nxy", Ax, P)
        + np.einsum("nxa,nay->nxy", P, Ax)
        + np.einsum("nakx,nab,nbky->nxy", Bx, P, Bx)
        + np.einsum("nakx,nayk->nxy", Bx, Q)
        + np.einsum("nxak,naky->nxy", Q, Bx)
    )


def solve_second_adjoint(
    model: CoefficientModel,
    ensemble: ParticleEnsemble,
    first: FirstOrderAdjoint,
    config: AdjointConfig | None = None,
) -> SecondOrderAdjoint:
    """Backward Euler for (P, Q) with the same projector as the first-order adjoint.

    With ``config.symmetrize`` the source, terminal and every iterate are
    replaced by their symmetric parts, so P stays symmetric.
    """
    config = config or AdjointConfig()
    grid = ensemble.grid
    projector = make_projector(
        config.backend, model, EnsemblePath(model, ensemble), degree=config.degree, ridge=config.ridge
    )
    N, M, d = ensemble.N, grid.steps, ensemble.d
    P = np.empty((N, M + 1, d, d))
    Q = np.empty((N, M, d, d, d))
    P[:, M] = second_terminal(model, ensemble, config.symmetrize)
    for k in range(M - 1, -1, -1):
        cond, Qk = projector.project(k, P[:, k + 1])
        if config.symmetrize:
            Qk = 0.5 * (Qk + np.swapaxes(Qk, 1, 2))
        Q[:, k] = Qk
        theta = theta_at(model, ensemble, k)
        source = second_source(model, ensemble, k, first)
        if config.symmetrize:
            source = _sym(source)

        def driver(Pk: np.ndarray) -> np.ndarray:
            value = homogeneous_terms(theta.A.dx, theta.B.dx, Pk, Qk) + source
            return _sym(value) if config.symmetrize else value

        P[:, k] = implicit_step(cond, driver, grid.dt, config.sweep_tol, config.max_sweeps, step=k)
        if not np.all(np.isfinite(P[:, k])):
            raise DivergenceError(f"second-order adjoint is non-finite at step {k}", step=k)
    logger.debug("Solved second-order adjoint for %s (symmetrize=%s)", model.name, config.symmetrize)
    return SecondOrderAdjoint(grid=grid, P=P, Q=Q)
