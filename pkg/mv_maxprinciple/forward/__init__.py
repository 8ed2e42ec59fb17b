"""Forward simulation package: controls, particle ensembles and empirical averaging."""

from __future__ import annotations

from typing import Protocol, runtime_checkable

import numpy as np


@runtime_checkable
class ControlLaw(Protocol):
    """Protocol every control law satisfies: one control value per particle per step."""

    def __call__(self, k: int, t: float, x: np.ndarray, m: np.ndarray) -> np.ndarray:
        """Return the (N,) control values on grid cell k given states (N, d) and moments m."""
        ...
