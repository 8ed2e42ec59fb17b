"""Scaling of sup-moments of the variational processes with the spike length."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from ..coeffs.model import CoefficientModel
from ..exceptions import ArgumentError
from ..forward import ControlLaw
from ..forward.controls import SpikeVariation
from ..forward.ensemble import ParticleEnsemble
from ..output import SCHEMA_VERSION, write_csv, write_json
from ..parallel import ordered_map
from .processes import VariationalBundle, build_bundle, moves_diffusion

logger = logging.getLogger(__name__)

# Expected exponent of eps, in units of the moment order k, for spikes that move the diffusion.
# A spike that only moves the drift shifts paths by O(eps) pathwise, doubling every exponent.
EXPECTED_ORDER: dict[str, int] = {
    "delta_x": 1,
    "Y": 1,
    "Z": 2,
    "delta_x_minus_Y": 2,
    "K": 2,
}
QUANTITIES = tuple(EXPECTED_ORDER)
# Half-width of the accepted slope interval, in units of k; K is bounded from below instead.
SLOPE_BANDS: dict[str, float] = {"delta_x": 0.15, "Y": 0.15, "Z": 0.25, "delta_x_minus_Y": 0.25}
DEFECT_EXCESS = 0.05
DEGENERATE_LEVEL = 1e-20
# Smallest accepted ratio of the largest to the smallest eps.
MIN_SPAN = 10.0


def sup_moment(paths: np.ndarray, k: int) -> tuple[float, float]:
    """E[max_t |path|^(2k)] over particles with its standard error."""
    per_particle = np.max(np.sum(paths**2, axis=-1) ** k, axis=1)
    n = per_particle.shape[0]
    return float(per_particle.mean()), float(per_particle.std(ddof=1) / np.sqrt(n))


def bundle_quantities(bundle: VariationalBundle) -> dict[str, np.ndarray]:
    return {
        "delta_x": bundle.delta_x,
        "Y": bundle.Y,
        "Z": bundle.Z,
        "delta_x_minus_Y": bundle.delta_x - bundle.Y,
        "K": bundle.defect,
    }


@dataclass(frozen=True)
class SlopeFit:
    quantity: str
    slope: float
    stderr: float
    intercept: float
    ci_low: float
    ci_high: float
    degenerate: bool = False


def fit_slope(quantity: str, eps: np.ndarray, estimates: np.ndarray) -> SlopeFit:
    """Least-squares slope of log(estimate) against log(eps), with a 95% interval."""
    if np.max(estimates) < DEGENERATE_LEVEL or np.any(estimates <= 0):
        nan = float("nan")
        return SlopeFit(quantity, nan, nan, nan, nan, nan, degenerate=True)
    fit = stats.linregress(np.log(eps), np.log(estimates))
    half = float(stats.t.ppf(0.975, len(eps) - 2) * fit.stderr)
    return SlopeFit(
        quantity=quantity,
        slope=float(fit.slope),
        stderr=float(fit.stderr),
        intercept=float(fit.intercept),
        ci_low=float(fit.slope) - half,
        ci_high=float(fit.slope) + half,
    )


@dataclass(frozen=True)
class OrderStudy:
    eps_grid: list[float]
    k: int
    estimates: dict[str, list[float]]
    stderrs: dict[str, list[float]]
    slopes: dict[str, SlopeFit] = field(default_factory=dict)
    drift_only: bool = False

    def expected(self, quantity: str) -> int:
        return EXPECTED_ORDER[quantity] * self.k * (2 if self.drift_only else 1)

    def rows(self) -> list[list]:
        return [
            [q, eps, self.estimates[q][idx], self.stderrs[q][idx]]
            for q in QUANTITIES
            for idx, eps in enumerate(self.eps_grid)
        ]

    def to_dict(self) -> dict:
        return {
            "eps_grid": self.eps_grid,
            "k": self.k,
            "drift_only": self.drift_only,
            "slopes": {
                q: {
                    "slope": s.slope, "stderr": s.stderr, "ci95": [s.ci_low, s.ci_high],
                    "expected": self.expected(q), "degenerate": s.degenerate,
                }
                for q, s in self.slopes.items()
            },
        }

    def write(self, directory: str | Path, config_hash: str) -> tuple[Path, Path]:
        directory = Path(directory)
        header = {"config_hash": config_hash, "schema_version": SCHEMA_VERSION}
        csv_path = write_csv(directory / "slopes.csv", ["quantity", "eps", "estimate", "stderr"], self.rows(), header)
        json_path = write_json(directory / "order_study.json", {**header, **self.to_dict()})
        return csv_path, json_path


def order_study(
    model: CoefficientModel,
    base: ParticleEnsemble,
    t0: float,
    beta: ControlLaw,
    eps_grid: list[float],
    k: int = 1,
    workers: int = 1,
) -> OrderStudy:
    """Spikes [t0, t0 + eps) over eps_grid on one shared base ensemble."""
    if len(eps_grid) < 4:
        raise ArgumentError(f"order study needs at least 4 eps values, got {len(eps_grid)}")
    if any(b >= a for a, b in zip(eps_grid, eps_grid[1:])):
        raise ArgumentError("eps_grid must be strictly decreasing")
    if eps_grid[0] < MIN_SPAN * eps_grid[-1]:
        raise ArgumentError(f"eps_grid must span at least a decade, got {eps_grid[0]:g} to {eps_grid[-1]:g}")
    if k < 1:
        raise ArgumentError(f"moment order k must be >= 1, got {k}")

    spikes = [SpikeVariation(t0=t0, eps=eps, beta=beta) for eps in eps_grid]
    for spike in spikes:
        spike.cell_range(base.grid)
    drift_only = not moves_diffusion(model, base, spikes[0])

    def run(spike: SpikeVariation) -> dict[str, tuple[float, float]]:
        bundle = build_bundle(model, base, spike)
        return {q: sup_moment(paths, k) for q, paths in bundle_quantities(bundle).items()}

    results = ordered_map(run, spikes, workers)
    estimates = {q: [r[q][0] for r in results] for q in QUANTITIES}
    stderrs = {q: [r[q][1] for r in results] for q in QUANTITIES}
    eps = np.asarray(eps_grid, dtype=float)
    slopes = {q: fit_slope(q, eps, np.asarray(estimates[q])) for q in QUANTITIES}
    for q, s in slopes.items():
        logger.info(
            "Order study %s: slope %.3f +/- %.3f (expected %d)", q, s.slope, s.stderr,
            EXPECTED_ORDER[q] * k * (2 if drift_only else 1), extra={"problem": model.name, "check": f"order.{q}"},
        )
    return OrderStudy(
        eps_grid=list(eps_grid), k=k, estimates=estimates, stderrs=stderrs, slopes=slopes, drift_only=drift_only
    )
