"""Control laws and spike variations."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from ..exceptions import AlignmentError, ArgumentError, DimensionError
from . import ControlLaw
from .grid import TimeGrid

FeedbackFn = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class OpenLoopControl:
    """Table of control values, one row per particle and one column per cell."""

    table: np.ndarray  # (N, M)

    def __call__(self, k: int, t: float, x: np.ndarray, m: np.ndarray) -> np.ndarray:
        if x.shape[0] != self.table.shape[0]:
            raise DimensionError(f"control table has {self.table.shape[0]} rows, ensemble has {x.shape[0]}")
        return self.table[:, k].copy()


@dataclass(frozen=True)
class FeedbackControl:
    """u = fn(t, x, m), evaluated on the current states."""

    fn: FeedbackFn
    name: str = "feedback"

    def __call__(self, k: int, t: float, x: np.ndarray, m: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(t, x, m), dtype=float).reshape(x.shape[0])


@dataclass(frozen=True)
class ConstantControl:
    value: float

    def __call__(self, k: int, t: float, x: np.ndarray, m: np.ndarray) -> np.ndarray:
        return np.full(x.shape[0], float(self.value))


@dataclass(frozen=True)
class LinearFeedback:
    """u = -gain * x_1 + offset."""

    gain: float
    offset: float = 0.0

    def __call__(self, k: int, t: float, x: np.ndarray, m: np.ndarray) -> np.ndarray:
        return -self.gain * x[:, 0] + self.offset


@dataclass(frozen=True)
class ShiftedControl:
    """Base control plus a constant shift."""

    base: ControlLaw
    shift: float

    def __call__(self, k: int, t: float, x: np.ndarray, m: np.ndarray) -> np.ndarray:
        return self.base(k, t, x, m) + self.shift


@dataclass(frozen=True)
class NegatedControl:
    base: ControlLaw

    def __call__(self, k: int, t: float, x: np.ndarray, m: np.ndarray) -> np.ndarray:
        return -self.base(k, t, x, m)


@dataclass(frozen=True)
class SpikeVariation:
    """Use beta on [t0, t0 + eps) and the base control elsewhere."""

    t0: float
    eps: float
    beta: ControlLaw

    def cell_range(self, grid: TimeGrid) -> tuple[int, int]:
        """Grid cells [k0, k1) covered by the spike; misaligned spikes raise AlignmentError."""
        if self.eps < 0 or self.t0 < 0:
            raise ArgumentError("spike needs t0 >= 0 and eps >= 0")
        k0 = grid.cells(self.t0)
        k1 = k0 + grid.cells(self.eps)
        if k1 > grid.steps:
            raise AlignmentError(f"spike [{self.t0:g}, {self.t0 + self.eps:g}) leaves the horizon")
        return k0, k1


@dataclass(frozen=True)
class SpikedControl:
    base: ControlLaw
    beta: ControlLaw
    k0: int
    k1: int

    def __call__(self, k: int, t: float, x: np.ndarray, m: np.ndarray) -> np.ndarray:
        if self.k0 <= k < self.k1:
            return self.beta(k, t, x, m)
        return self.base(k, t, x, m)


def apply_spike(control: ControlLaw, spike: SpikeVariation, grid: TimeGrid) -> SpikedControl:
    """alpha^eps = beta on the spike cells and alpha elsewhere."""
    k0, k1 = spike.cell_range(grid)
    return SpikedControl(base=control, beta=spike.beta, k0=k0, k1=k1)


def make_beta(kind: str, value: float, base: ControlLaw) -> ControlLaw:
    """Alternate control for a spike: 'shift' (base + value), 'constant' or 'negate'."""
    if kind == "shift":
        return ShiftedControl(base=base, shift=value)
    if kind == "constant":
        return ConstantControl(value=value)
    if kind == "negate":
        return NegatedControl(base=base)
    raise ArgumentError(f"Unknown beta kind '{kind}'")


def tabulate(control: ControlLaw, grid: TimeGrid, states: np.ndarray, moments: np.ndarray) -> np.ndarray:
    """Evaluate a control law along a stored path; returns the (N, M) table."""
    table = np.empty((states.shape[0], grid.steps))
    knots = grid.knots
    for k in range(grid.steps):
        table[:, k] = control(k, float(knots[k]), states[:, k, :], moments[k])
    return table
