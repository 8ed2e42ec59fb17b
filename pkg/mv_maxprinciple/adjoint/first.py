"""First-order adjoint (p, q): the mean-field backward equation driven by H_x and E[d_mu H]."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..coeffs.hamiltonian import COST_SIGN, HamiltonianEval, hamiltonian
from ..coeffs.model import CoefficientModel
from ..config import AdjointConfig
from ..exceptions import DivergenceError
from ..forward.ensemble import ParticleEnsemble, terminal_at
from ..forward.grid import TimeGrid
from .projection import EnsemblePath, implicit_step, make_projector

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FirstOrderAdjoint:
    grid: TimeGrid
    p: np.ndarray  # (N, M+1, d)
    q: np.ndarray  # (N, M, d, d), last axis indexes the Brownian coordinate

    def q_at(self, k: int) -> np.ndarray:
        """q on cell k; the terminal knot reuses the last cell."""
        return self.q[:, min(k, self.grid.steps - 1)]


def first_terminal(model: CoefficientModel, ensemble: ParticleEnsemble) -> np.ndarray:
    """p_T = g_x(X_T, m_T) + Dpsi(X_T)^T E[g_m]."""
    g = terminal_at(model, ensemble)
    dpsi = model.momentmap.dpsi(ensemble.states[:, -1, :])
    return g.dx + np.einsum("k,nkd->nd", g.dm.mean(axis=0), dpsi)


def hamiltonian_at(
    model: CoefficientModel,
    ensemble: ParticleEnsemble,
    k: int,
    p: np.ndarray,
    q: np.ndarray,
    controls: np.ndarray | None = None,
) -> HamiltonianEval:
    """Cost-sign Hamiltonian along the path at knot k."""
    u = ensemble.control_at(k) if controls is None else controls
    return hamiltonian(
        model, float(ensemble.grid.knots[k]), ensemble.states[:, k, :], ensemble.moments[k],
        u, p, q, cost_sign=COST_SIGN,
    )


def first_driver(
    model: CoefficientModel,
    ensemble: ParticleEnsemble,
    k: int,
    p: np.ndarray,
    q: np.ndarray,
) -> np.ndarray:
    """H_x(theta^i) + Dpsi(X^i)^T E[H_m]: the tilde average of d_mu H evaluated at each particle."""
    H = hamiltonian_at(model, ensemble, k, p, q)
    dpsi = model.momentmap.dpsi(ensemble.states[:, k, :])
    return H.H_x + np.einsum("k,nkd->nd", H.H_m.mean(axis=0), dpsi)


def solve_first_adjoint(
    model: CoefficientModel,
    ensemble: ParticleEnsemble,
    config: AdjointConfig | None = None,
) -> FirstOrderAdjoint:
    """Backward Euler: q_k = E_k[p_{k+1} dW_k^T]/dt, p_k = E_k[p_{k+1}] + dt * driver(p_k, q_k)."""
    config = config or AdjointConfig()
    grid = ensemble.grid
    projector = make_projector(
        config.backend, model, EnsemblePath(model, ensemble), degree=config.degree, ridge=config.ridge
    )
    N, M, d = ensemble.N, grid.steps, ensemble.d
    p = np.empty((N, M + 1, d))
    q = np.empty((N, M, d, d))
    p[:, M] = first_terminal(model, ensemble)
    for k in range(M - 1, -1, -1):
        cond, q[:, k] = projector.project(k, p[:, k + 1])
        qk = q[:, k]
        p[:, k] = implicit_step(
            cond, lambda pk: first_driver(model, ensemble, k, pk, qk), grid.dt,
            config.sweep_tol, config.max_sweeps, step=k,
        )
        if not np.all(np.isfinite(p[:, k])):
            raise DivergenceError(f"first-order adjoint is non-finite at step {k}", step=k)
    logger.debug("Solved first-order adjoint for %s (backend=%s)", model.name, config.backend)
    return FirstOrderAdjoint(grid=grid, p=p, q=q)
