"""Euler schemes for the first and second variational processes along a frozen base path."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..coeffs.evaluation import Theta
from ..coeffs.model import CoefficientModel
from ..exceptions import DimensionError, DivergenceError
from ..forward.controls import OpenLoopControl, SpikeVariation
from ..forward.ensemble import ParticleEnsemble, simulate_mv_sde, theta_at
from ..forward.tilde import copy_first_moment, copy_second_moment, double_copy_average

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SpikeTable:
    """Spiked control alpha^eps as an open-loop table along the base path."""

    table: np.ndarray  # (N, M)
    k0: int
    k1: int

    def active(self, k: int) -> bool:
        return self.k0 <= k < self.k1


def spike_table(base: ParticleEnsemble, spike: SpikeVariation) -> SpikeTable:
    """Realized base controls with beta, evaluated on the base path, on the spike cells."""
    k0, k1 = spike.cell_range(base.grid)
    table = base.controls.copy()
    knots = base.grid.knots
    for k in range(k0, k1):
        table[:, k] = spike.beta(k, float(knots[k]), base.states[:, k, :], base.moments[k])
    return SpikeTable(table=table, k0=k0, k1=k1)


@dataclass(frozen=True)
class KnotSources:
    """Base coefficients at knot k and, on spike cells, the increments delta = spiked - base."""

    theta: Theta
    delta: Theta | None


def knot_sources(model: CoefficientModel, base: ParticleEnsemble, spiked: SpikeTable, k: int) -> KnotSources:
    theta = theta_at(model, base, k)
    if not spiked.active(k):
        return KnotSources(theta=theta, delta=None)
    u_eps = spiked.table[:, k]
    model.control_set.require(u_eps)
    return KnotSources(theta=theta, delta=theta_at(model, base, k, controls=u_eps).delta(theta))


def moves_diffusion(model: CoefficientModel, base: ParticleEnsemble, spike: SpikeVariation) -> bool:
    """True when the spike changes the diffusion coefficient of some particle on its cells."""
    table = spike_table(base, spike)
    return any(
        bool(np.any(knot_sources(model, base, table, k).delta.B.value != 0.0)) for k in range(table.k0, table.k1)
    )


def first_variation_increment(src: KnotSources, Y: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(drift, diffusion) of the first variation at one knot; diffusion is (N, d, d)."""
    th = src.theta
    drift = np.einsum("nax,nx->na", th.A.dx, Y) + th.A.dm @ v
    diffusion = np.einsum("nabx,nx->nab", th.B.dx, Y) + th.B.dm @ v
    if src.delta is not None:
        drift = drift + src.delta.A.value
        diffusion = diffusion + src.delta.B.value
    return drift, diffusion


def second_variation_sources(
    src: KnotSources,
    Y: np.ndarray,
    v: np.ndarray,
    w: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Quadratic (drift, diffusion) sources driving the second variation, without the Z terms."""
    th = src.theta

    def quadratic(term, sub_xx: str, sub_xm: str) -> np.ndarray:
        return (
            0.5 * np.einsum(sub_xx, term.dxx, Y, Y)
            + 0.5 * np.tensordot(term.dm, w, axes=([-1], [0]))
            + 0.5 * double_copy_average(term.dmm, v)
            + np.einsum(sub_xm, term.dxm, Y, v)
        )

    drift = quadratic(th.A, "naxy,nx,ny->na", "naxk,nx,k->na")
    diffusion = quadratic(th.B, "nabxy,nx,ny->nab", "nabxk,nx,k->nab")
    if src.delta is not None:
        dA, dB = src.delta.A, src.delta.B
        drift = drift + np.einsum("nax,nx->na", dA.dx, Y) + dA.dm @ v
        diffusion = diffusion + np.einsum("nabx,nx->nab", dB.dx, Y) + dB.dm @ v
    return drift, diffusion


def _check_finite(values: np.ndarray, k: int, name: str) -> None:
    if not np.all(np.isfinite(values)):
        raise DivergenceError(f"non-finite {name} after step {k + 1}", step=k + 1)


def simulate_first_variation(
    model: CoefficientModel,
    base: ParticleEnsemble,
    spike: SpikeVariation,
    spiked: SpikeTable | None = None,
) -> np.ndarray:
    """Y^eps on the base grid and noise, shape (N, M+1, d); Y_0 = 0."""
    spiked = spiked or spike_table(base, spike)
    mm = model.momentmap
    dt = base.grid.dt
    Y = np.zeros_like(base.states)
    for k in range(base.grid.steps):
        src = knot_sources(model, base, spiked, k)
        v = copy_first_moment(mm, base.states[:, k, :], Y[:, k])
        drift, diffusion = first_variation_increment(src, Y[:, k], v)
        Y[:, k + 1] = Y[:, k] + drift * dt + np.einsum("nab,nb->na", diffusion, base.dW[:, k])
        _check_finite(Y[:, k + 1], k, "first variation")
    return Y


def simulate_second_variation(
    model: CoefficientModel,
    base: ParticleEnsemble,
    spike: SpikeVariation,
    Y: np.ndarray,
    spiked: SpikeTable | None = None,
) -> np.ndarray:
    """Z^eps driven by the quadratic sources in Y; Z_0 = 0."""
    if Y.shape != base.states.shape:
        raise DimensionError(f"Y must have shape {base.states.shape}, got {Y.shape}")
    spiked = spiked or spike_table(base, spike)
    mm = model.momentmap
    dt = base.grid.dt
    Z = np.zeros_like(base.states)
    for k in range(base.grid.steps):
        src = knot_sources(model, base, spiked, k)
        x = base.states[:, k, :]
        vY = copy_first_moment(mm, x, Y[:, k])
        wY = copy_second_moment(mm, x, Y[:, k])
        vZ = copy_first_moment(mm, x, Z[:, k])
        th = src.theta
        lin_drift = np.einsum("nax,nx->na", th.A.dx, Z[:, k]) + th.A.dm @ vZ
        lin_diff = np.einsum("nabx,nx->nab", th.B.dx, Z[:, k]) + th.B.dm @ vZ
        q_drift, q_diff = second_variation_sources(src, Y[:, k], vY, wY)
        diffusion = lin_diff + q_diff
        Z[:, k + 1] = Z[:, k] + (lin_drift + q_drift) * dt + np.einsum("nab,nb->na", diffusion, base.dW[:, k])
        _check_finite(Z[:, k + 1], k, "second variation")
    return Z


@dataclass(frozen=True)
class VariationalBundle:
    """Base and spiked ensembles on common noise with the variational processes."""

    base: ParticleEnsemble
    spiked: ParticleEnsemble
    Y: np.ndarray
    Z: np.ndarray
    spike: SpikeVariation
    table: SpikeTable

    @property
    def delta_x(self) -> np.ndarray:
        return self.spiked.states - self.base.states

    @property
    def defect(self) -> np.ndarray:
        """K^eps = X^eps - X - Y^eps - Z^eps."""
        return self.delta_x - self.Y - self.Z


def build_bundle(
    model: CoefficientModel,
    base: ParticleEnsemble,
    spike: SpikeVariation,
    workers: int = 1,
) -> VariationalBundle:
    """Simulate X^eps with the base noise, then Y^eps and Z^eps along the base path."""
    table = spike_table(base, spike)
    spiked = simulate_mv_sde(
        model, base.grid, OpenLoopControl(table.table), base.states[0, 0, :], base.N,
        seed=base.seed, namespace=base.namespace, workers=workers, dW=base.dW,
    )
    Y = simulate_first_variation(model, base, spike, table)
    Z = simulate_second_variation(model, base, spike, Y, table)
    logger.debug(
        "Built variational bundle at eps=%g (cells %d..%d)", spike.eps, table.k0, table.k1,
        extra={"eps": spike.eps, "problem": model.name},
    )
    return VariationalBundle(base=base, spiked=spiked, Y=Y, Z=Z, spike=spike, table=table)
