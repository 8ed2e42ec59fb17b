"""Uniform time grid on [0, T]."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import AlignmentError, ArgumentError

_ALIGN_TOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self) -> None:
        if self.horizon <= 0:
            raise ArgumentError(f"horizon must be > 0, got {self.horizon}")
        if self.steps < 1:
            raise ArgumentError(f"steps must be >= 1, got {self.steps}")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def knots(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def cells(self, duration: float) -> int:
        """Number of whole cells spanning duration; AlignmentError if it is not whole."""
        ratio = duration / self.dt
        nearest = round(ratio)
        if abs(ratio - nearest) > _ALIGN_TOL * max(1.0, abs(ratio)):
            raise AlignmentError(f"{duration:g} is not a whole number of cells of width {self.dt:g}")
        return int(nearest)

    def index(self, t: float) -> int:
        """Knot index of time t; AlignmentError off the grid."""
        k = self.cells(t)
        if not 0 <= k <= self.steps:
            raise ArgumentError(f"time {t:g} lies outside [0, {self.horizon:g}]")
        return k
