"""Convergence of the empirical mean path to its mean-field limit as N grows."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats

from ..coeffs.model import CoefficientModel
from ..exceptions import ArgumentError, DimensionError
from . import ControlLaw
from .ensemble import simulate_mv_sde
from .grid import TimeGrid

logger = logging.getLogger(__name__)

DEFAULT_SIZES = (100, 400, 1600)
_REPLICATE_NAMESPACE = 500


@dataclass(frozen=True)
class ChaosStudy:
    sizes: list[int]
    errors: list[float]  # E[max_k |m_k - m_ref(t_k)|^2]
    stderrs: list[float]
    slope: float  # of log error against log N; -1 at the Monte Carlo rate
    slope_stderr: float

    def to_dict(self) -> dict:
        return {
            "sizes": self.sizes,
            "errors": self.errors,
            "stderrs": self.stderrs,
            "slope": self.slope,
            "slope_stderr": self.slope_stderr,
        }


def propagation_of_chaos(
    model: CoefficientModel,
    grid: TimeGrid,
    control: ControlLaw,
    x0: np.ndarray | list[float],
    reference: np.ndarray,
    seed: int,
    sizes: tuple[int, ...] = DEFAULT_SIZES,
    replicates: int = 20,
    workers: int = 1,
) -> ChaosStudy:
    """Sup-in-time squared error of the first moment against ``reference`` (M+1 values), per N."""
    reference = np.asarray(reference, dtype=float)
    if reference.shape != (grid.steps + 1,):
        raise DimensionError(f"reference must have {grid.steps + 1} values, got {reference.shape}")
    if len(sizes) < 2:
        raise ArgumentError("need at least two ensemble sizes")
    if replicates < 2:
        raise ArgumentError("need at least two replicates per size")

    errors, stderrs = [], []
    for n in sizes:
        per_replicate = np.empty(replicates)
        for r in range(replicates):
            ensemble = simulate_mv_sde(
                model, grid, control, x0, n, seed=seed, namespace=_REPLICATE_NAMESPACE + r, workers=workers
            )
            per_replicate[r] = np.max((ensemble.moments[:, 0] - reference) ** 2)
        errors.append(float(per_replicate.mean()))
        stderrs.append(float(per_replicate.std(ddof=1) / np.sqrt(replicates)))
        logger.debug("Mean-path error at N=%d: %.3e", n, errors[-1], extra={"particles": n})
    fit = stats.linregress(np.log(sizes), np.log(errors))
    study = ChaosStudy(
        sizes=list(sizes), errors=errors, stderrs=stderrs,
        slope=float(fit.slope), slope_stderr=float(fit.stderr),
    )
    logger.info("Mean-path convergence slope %.3f over N=%s", study.slope, list(sizes))
    return study
