"""Empirical cost functional J = E[int_0^T f dt + g(X_T, m_T)]."""

from __future__ import annotations

import numpy as np

from ..coeffs.model import CoefficientModel
from ..exceptions import ArgumentError, NumericError
from ..forward import ControlLaw
from ..forward.controls import tabulate
from ..forward.ensemble import ParticleEnsemble

# Recorded controls and the law re-evaluated along the stored path must agree this closely.
CONTROL_ATOL = 1e-12


def _controls(ensemble: ParticleEnsemble, control: ControlLaw | None) -> np.ndarray:
    if control is None:
        return ensemble.controls
    table = tabulate(control, ensemble.grid, ensemble.states, ensemble.moments)
    if not np.allclose(table, ensemble.controls, rtol=0.0, atol=CONTROL_ATOL):
        raise ArgumentError("ensemble was not simulated under this control law")
    return table


def particle_costs(
    model: CoefficientModel, ensemble: ParticleEnsemble, control: ControlLaw | None = None
) -> np.ndarray:
    """Per-particle cost; each cell is a trapezoid with that cell's control at both ends.

    Given a control law, the running cost uses that law evaluated along the
    stored path, which must reproduce the controls the ensemble recorded.
    """
    grid = ensemble.grid
    knots = grid.knots
    controls = _controls(ensemble, control)
    running = np.zeros(ensemble.N)
    for k in range(grid.steps):
        u = controls[:, k]
        left = model.f.value(float(knots[k]), ensemble.states[:, k], ensemble.moments[k], u)
        right = model.f.value(float(knots[k + 1]), ensemble.states[:, k + 1], ensemble.moments[k + 1], u)
        running += 0.5 * grid.dt * (left + right)
    M = grid.steps
    terminal = model.g.value(grid.horizon, ensemble.states[:, M], ensemble.moments[M], np.zeros(ensemble.N))
    costs = running + terminal
    if not np.all(np.isfinite(costs)):
        raise NumericError("non-finite cost")
    return costs


def cost_functional(
    model: CoefficientModel, ensemble: ParticleEnsemble, control: ControlLaw | None = None
) -> float:
    return float(particle_costs(model, ensemble, control).mean())


def cost_stderr(model: CoefficientModel, ensemble: ParticleEnsemble, control: ControlLaw | None = None) -> float:
    costs = particle_costs(model, ensemble, control)
    return float(costs.std(ddof=1) / np.sqrt(costs.size))


def paired_cost_differences(
    model: CoefficientModel, perturbed: ParticleEnsemble, base: ParticleEnsemble
) -> np.ndarray:
    """Per-particle J(perturbed) - J(base) for two ensembles driven by the same noise."""
    if perturbed.N != base.N or perturbed.grid != base.grid:
        raise ArgumentError("paired costs need ensembles of equal size on the same grid")
    if (perturbed.seed, perturbed.namespace) != (base.seed, base.namespace):
        raise ArgumentError("paired costs need ensembles from the same noise stream")
    return particle_costs(model, perturbed) - particle_costs(model, base)
