"""Ridge-regularized polynomial least squares for conditional expectations."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ..exceptions import ArgumentError, DimensionError, SolverError

MIN_SAMPLES_PER_FEATURE = 10


@dataclass(frozen=True)
class RegressionBasis:
    """All monomials of total degree <= degree in the standardized inputs."""

    degree: int = 2
    ridge: float = 1e-8

    def __post_init__(self) -> None:
        if self.degree < 0:
            raise ArgumentError(f"degree must be >= 0, got {self.degree}")
        if self.ridge < 0:
            raise ArgumentError(f"ridge must be >= 0, got {self.ridge}")

    def exponents(self, inputs: int) -> list[tuple[int, ...]]:
        terms: list[tuple[int, ...]] = []
        for total in range(self.degree + 1):
            terms.extend(itertools.combinations_with_replacement(range(inputs), total))
        return terms

    def size(self, inputs: int) -> int:
        return len(self.exponents(inputs))

    def design(self, z: np.ndarray) -> np.ndarray:
        """Design matrix (n, size); the empty monomial is the intercept column."""
        columns = [np.prod(z[:, list(combo)], axis=1) if combo else np.ones(z.shape[0])
                   for combo in self.exponents(z.shape[1])]
        return np.stack(columns, axis=1)


@dataclass(frozen=True)
class FittedConditional:
    """Evaluator z -> sum_b coef_b phi_b((z - centre) / scale)."""

    basis: RegressionBasis
    centre: np.ndarray
    scale: np.ndarray
    coefficients: np.ndarray  # (size, s)
    fitted: np.ndarray  # in-sample values (n, s)

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return self.basis.design((z - self.centre) / self.scale) @ self.coefficients


def regress_conditional(targets: np.ndarray, features: np.ndarray, basis: RegressionBasis) -> FittedConditional:
    """Least-squares projection of targets (n, s) on the basis span of features (n, r).

    The ridge term is basis.ridge times the mean diagonal of the Gram matrix.
    """
    targets = np.asarray(targets, dtype=float)
    features = np.asarray(features, dtype=float)
    if targets.ndim == 1:
        targets = targets[:, None]
    if features.ndim == 1:
        features = features[:, None]
    n = features.shape[0]
    if targets.shape[0] != n:
        raise DimensionError(f"{targets.shape[0]} targets for {n} feature rows")
    size = basis.size(features.shape[1])
    if n < MIN_SAMPLES_PER_FEATURE * size:
        raise SolverError(f"{n} samples are too few for {size} basis functions")

    centre = features.mean(axis=0)
    scale = features.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    design = basis.design((features - centre) / scale)
    gram = design.T @ design
    penalty = basis.ridge * np.trace(gram) / size
    try:
        coefficients = scipy.linalg.solve(gram + penalty * np.eye(size), design.T @ targets, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise SolverError(f"regression is under-determined: {exc}") from exc
    if not np.all(np.isfinite(coefficients)):
        raise SolverError("regression produced non-finite coefficients")
    return FittedConditional(basis, centre, scale, coefficients, design @ coefficients)
