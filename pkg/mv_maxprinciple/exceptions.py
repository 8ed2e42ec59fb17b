"""Custom exception hierarchy for the maximum-principle laboratory."""

from __future__ import annotations


class LabError(Exception):
    """Base exception for all laboratory errors."""


class ConfigError(LabError):
    """Invalid or missing experiment configuration."""


class DimensionError(LabError):
    """Array shapes or ensemble sizes do not fit together."""


class NumericError(LabError):
    """Non-finite input or result."""


class DivergenceError(NumericError):
    """A time-stepping scheme produced non-finite values."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class ArgumentError(LabError):
    """Invalid argument value (step size, mode name, grid length, ...)."""


class AlignmentError(ArgumentError):
    """A spike variation does not fall on whole grid cells."""


class IndependenceError(ArgumentError):
    """Two ensembles that must be independent share a noise stream."""


class ControlError(LabError):
    """A control value lies outside the admissible set U."""


class SolverError(LabError):
    """A backward solver could not complete a step."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class NonConvergenceError(SolverError):
    """Picard iteration hit max_iter before reaching the tolerance."""

    def __init__(self, message: str, history: list[float] | None = None):
        super().__init__(message)
        self.history = list(history or [])


class CheckFailed(LabError):
    """One or more verification checks returned a failing verdict."""

    def __init__(self, failing: list[str]):
        super().__init__(f"Failing checks: {', '.join(failing)}")
        self.failing = list(failing)
