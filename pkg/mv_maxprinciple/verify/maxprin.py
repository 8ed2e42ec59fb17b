"""Pointwise maximum-principle check along a candidate control.

For every checked cell, every particle and every trial control u:
V = H(u) - H(alpha) + <P, (B(u) - B(alpha))(B(u) - B(alpha))^T> / 2,
with the cost-sign Hamiltonian at the adjoints (p, q). A minimizing
control keeps V >= 0; the check passes iff min V >= -tol * scale.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..adjoint.first import FirstOrderAdjoint, hamiltonian_at
from ..adjoint.second import SecondOrderAdjoint
from ..coeffs.model import CoefficientModel
from ..exceptions import ArgumentError
from ..forward.ensemble import ParticleEnsemble
from ..output import SCHEMA_VERSION, write_csv

logger = logging.getLogger(__name__)

QUANTILES = (0.01, 0.05, 0.5)


@dataclass(frozen=True)
class MaxPrincipleResult:
    min_value: float
    scale: float
    tol: float
    rows: list[list] = field(default_factory=list, repr=False)
    worst: tuple[int, float] = (0, 0.0)  # (step, u) of the minimum

    @property
    def passed(self) -> bool:
        return self.min_value >= -self.tol * self.scale

    def to_dict(self) -> dict:
        return {
            "min_value": self.min_value,
            "scale": self.scale,
            "tol": self.tol,
            "passed": self.passed,
            "worst_step": self.worst[0],
            "worst_u": self.worst[1],
        }

    def write(self, directory: str | Path, config_hash: str) -> Path:
        columns = ["step", "time", "u", "min", *[f"q{int(q * 100):02d}" for q in QUANTILES]]
        header = {"config_hash": config_hash, "schema_version": SCHEMA_VERSION}
        return write_csv(Path(directory) / "maxprin.csv", columns, self.rows, header)


def check_steps(steps: int, t_points: int) -> np.ndarray:
    """Evenly spread cell indices in [0, steps - 1]."""
    if t_points < 1:
        raise ArgumentError(f"t_points must be >= 1, got {t_points}")
    return np.unique(np.linspace(0, steps - 1, min(t_points, steps)).round().astype(int))


def trial_controls(
    model: CoefficientModel,
    alpha: np.ndarray,
    points: int = 41,
    span: float = 2.0,
    relative: bool = True,
    values: list[float] | None = None,
) -> np.ndarray:
    """Trial controls per particle, shape (N, G).

    Explicit values are used as given; a finite U uses its points;
    otherwise a grid of ``points`` values across +/- span, centred on each
    particle's alpha when ``relative``, clipped to U.
    """
    n = alpha.shape[0]
    if values:
        grid = np.asarray(values, dtype=float)
        model.control_set.require(grid)
        return np.broadcast_to(grid, (n, grid.size)).copy()
    if points < 1:
        raise ArgumentError("trial control grid is empty")
    cs = model.control_set
    if cs.kind == "finite":
        return np.broadcast_to(np.asarray(cs.points, dtype=float), (n, len(cs.points))).copy()
    offsets = np.linspace(-span, span, points)
    centre = alpha[:, None] if relative else np.zeros((n, 1))
    return np.clip(centre + offsets[None, :], cs.low, cs.high)


def check_max_principle(
    model: CoefficientModel,
    ensemble: ParticleEnsemble,
    first: FirstOrderAdjoint,
    second: SecondOrderAdjoint,
    u_points: int = 41,
    u_span: float = 2.0,
    relative: bool = True,
    u_values: list[float] | None = None,
    t_points: int = 50,
    tol: float = 0.01,
) -> MaxPrincipleResult:
    """Scan V over the checked cells and trial controls; the table keeps per-(t, u) particle quantiles."""
    knots = ensemble.grid.knots
    rows: list[list] = []
    overall = np.inf
    worst = (0, 0.0)
    h_sizes = []
    # Relative grids are labelled by their offset from alpha.
    by_offset = relative and not u_values and model.control_set.kind != "finite"
    for k in check_steps(ensemble.grid.steps, t_points):
        alpha = ensemble.controls[:, k]
        p, q, P = first.p[:, k], first.q[:, k], second.P[:, k]
        x, m = ensemble.states[:, k], ensemble.moments[k]
        t = float(knots[k])
        h_alpha = hamiltonian_at(model, ensemble, k, p, q).value
        B_alpha = model.B.value(t, x, m, alpha)
        h_sizes.append(np.abs(h_alpha))
        trials = trial_controls(model, alpha, u_points, u_span, relative, u_values)
        for g in range(trials.shape[1]):
            u = trials[:, g]
            dB = model.B.value(t, x, m, u) - B_alpha
            V = (
                hamiltonian_at(model, ensemble, k, p, q, controls=u).value
                - h_alpha
                + 0.5 * np.einsum("nab,naw,nbw->n", P, dB, dB)
            )
            i = int(np.argmin(V))
            if V[i] < overall:
                overall, worst = float(V[i]), (int(k), float(u[i]))
            label = float(u[0] - alpha[0]) if by_offset else float(u[0])
            rows.append([int(k), t, label, float(V.min()), *np.quantile(V, QUANTILES)])
    scale = max(1.0, float(np.mean(np.concatenate(h_sizes))))
    result = MaxPrincipleResult(min_value=overall, scale=scale, tol=tol, rows=rows, worst=worst)
    logger.info(
        "Maximum principle: min V=%.4g (scale %.3g) at step %d, u=%.4g -> %s",
        overall, scale, worst[0], worst[1], "pass" if result.passed else "fail",
        extra={"check": "maxprin", "verdict": "pass" if result.passed else "fail"},
    )
    return result
