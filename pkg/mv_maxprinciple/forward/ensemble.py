"""N-particle Euler-Maruyama simulation of the controlled mean-field state equation."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..coeffs.evaluation import TermValues, Theta, evaluate_terminal, evaluate_theta
from ..coeffs.model import CoefficientModel
from ..coeffs.moments import MomentMap
from ..exceptions import DimensionError, DivergenceError
from ..output import SCHEMA_VERSION, write_csv, write_json
from ..parallel import chunk_bounds, ordered_map
from . import ControlLaw
from .controls import OpenLoopControl
from .grid import TimeGrid
from .rng import brownian_increments

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParticleEnsemble:
    """Simulated particle paths with the noise and controls that produced them.

    ``controls`` holds the realized control table, so variational and
    adjoint computations can freeze the base control along the path.
    """

    grid: TimeGrid
    states: np.ndarray  # (N, M+1, d)
    dW: np.ndarray  # (N, M, d)
    moments: np.ndarray  # (M+1, K)
    controls: np.ndarray  # (N, M)
    seed: int
    namespace: int = 0

    @property
    def N(self) -> int:
        return self.states.shape[0]

    @property
    def d(self) -> int:
        return self.states.shape[2]

    @property
    def stream_ids(self) -> list[tuple[int, int]]:
        return [(self.namespace, i) for i in range(self.N)]

    def open_loop(self) -> OpenLoopControl:
        """The realized controls as an open-loop table."""
        return OpenLoopControl(self.controls)

    def control_at(self, k: int) -> np.ndarray:
        """Control on cell k; the terminal knot reuses the last cell's value."""
        return self.controls[:, min(k, self.grid.steps - 1)]


def empirical_moments(states_at_t: np.ndarray, momentmap: MomentMap) -> np.ndarray:
    """(1/N) sum_i psi(X^i)."""
    return momentmap.mean(states_at_t)


def _step(
    model: CoefficientModel,
    t: float,
    dt: float,
    x: np.ndarray,
    m: np.ndarray,
    u: np.ndarray,
    dw: np.ndarray,
) -> np.ndarray:
    drift = model.A.value(t, x, m, u)
    diffusion = model.B.value(t, x, m, u)
    return x + drift * dt + np.einsum("nab,nb->na", diffusion, dw)


def simulate_mv_sde(
    model: CoefficientModel,
    grid: TimeGrid,
    control: ControlLaw,
    x0: np.ndarray | list[float],
    particles: int,
    seed: int,
    namespace: int = 0,
    workers: int = 1,
    dW: np.ndarray | None = None,
) -> ParticleEnsemble:
    """Explicit Euler step with moments m_k of the current empirical measure.

    Every particle in a step sees the same m_k; particles then advance
    independently, in chunks of at most ``workers`` jobs. Passing ``dW``
    reuses an existing noise sample (common random numbers).
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (model.d,):
        raise DimensionError(f"x0 must have {model.d} entries, got {x0.shape[0]}")
    if particles < 2:
        raise DimensionError(f"need at least 2 particles, got {particles}")
    if dW is None:
        dW = brownian_increments(seed, namespace, particles, grid.steps, model.d, grid.dt, workers)
    elif dW.shape != (particles, grid.steps, model.d):
        raise DimensionError(f"dW must have shape {(particles, grid.steps, model.d)}, got {dW.shape}")

    states = np.empty((particles, grid.steps + 1, model.d))
    states[:, 0, :] = x0
    moments = np.empty((grid.steps + 1, model.K))
    controls = np.empty((particles, grid.steps))
    bounds = chunk_bounds(particles, workers)
    knots = grid.knots

    for k in range(grid.steps):
        t = float(knots[k])
        x = states[:, k, :]
        m = model.momentmap.mean(x)
        moments[k] = m
        u = np.asarray(control(k, t, x, m), dtype=float)
        model.control_set.require(u)
        controls[:, k] = u

        def advance(chunk: tuple[int, int]) -> np.ndarray:
            lo, hi = chunk
            return _step(model, t, grid.dt, x[lo:hi], m, u[lo:hi], dW[lo:hi, k])

        nxt = np.concatenate(ordered_map(advance, bounds, workers), axis=0)
        if not np.all(np.isfinite(nxt)):
            raise DivergenceError(f"non-finite state after step {k + 1} of {grid.steps}", step=k + 1)
        states[:, k + 1, :] = nxt

    moments[grid.steps] = model.momentmap.mean(states[:, grid.steps, :])
    logger.debug(
        "Simulated %s: N=%d, M=%d, seed=%d, namespace=%d",
        model.name, particles, grid.steps, seed, namespace,
        extra={"problem": model.name, "particles": particles},
    )
    return ParticleEnsemble(
        grid=grid, states=states, dW=dW, moments=moments, controls=controls,
        seed=seed, namespace=namespace,
    )


def write_paths(
    ensemble: ParticleEnsemble,
    directory: str | Path,
    config_hash: str,
    name: str = "paths",
) -> tuple[Path, Path]:
    """paths.csv (particle, step, time, x_1..x_d) plus a JSON sidecar with seed and config hash."""
    directory = Path(directory)
    knots = ensemble.grid.knots
    columns = ["particle", "step", "time"] + [f"x_{c + 1}" for c in range(ensemble.d)]

    def rows():
        for i in range(ensemble.N):
            for k in range(ensemble.grid.steps + 1):
                yield [i, k, knots[k], *ensemble.states[i, k]]

    header = {"config_hash": config_hash, "schema_version": SCHEMA_VERSION}
    csv_path = write_csv(directory / f"{name}.csv", columns, rows(), header)
    sidecar = write_json(
        directory / f"{name}.json",
        {
            "config_hash": config_hash,
            "schema_version": SCHEMA_VERSION,
            "seed": ensemble.seed,
            "namespace": ensemble.namespace,
            "particles": ensemble.N,
            "steps": ensemble.grid.steps,
            "horizon": ensemble.grid.horizon,
            "dimension": ensemble.d,
        },
    )
    logger.info("Wrote %s and %s", csv_path, sidecar)
    return csv_path, sidecar


def theta_at(
    model: CoefficientModel,
    ensemble: ParticleEnsemble,
    k: int,
    controls: np.ndarray | None = None,
) -> Theta:
    """theta_k along the path with the realized control, or with ``controls`` substituted."""
    u = ensemble.control_at(k) if controls is None else controls
    return evaluate_theta(
        model, float(ensemble.grid.knots[k]), ensemble.states[:, k, :], ensemble.moments[k], u
    )


def terminal_at(model: CoefficientModel, ensemble: ParticleEnsemble) -> TermValues:
    M = ensemble.grid.steps
    return evaluate_terminal(model, ensemble.grid.horizon, ensemble.states[:, M, :], ensemble.moments[M])
