"""Coefficient models: A, B, f, g with state, moment and mixed derivatives."""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ArgumentError, ControlError, DimensionError
from .moments import MomentMap, relative_error

logger = logging.getLogger(__name__)

# (t, x: (N, d), m: (K,), u: (N,)) -> batched array
Evaluator = Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class CoefficientTerm:
    """One coefficient and its derivatives, batched over the leading particle axis.

    For a term of value shape S (``(d,)`` for A, ``(d, d)`` for B, ``()`` for
    f and g) the evaluators return arrays of shape (N, *S), (N, *S, d),
    (N, *S, d, d), (N, *S, K), (N, *S, K, K) and (N, *S, d, K).
    """

    shape: tuple[int, ...]
    value: Evaluator
    dx: Evaluator
    dxx: Evaluator
    dm: Evaluator
    dmm: Evaluator
    dxm: Evaluator


@dataclass(frozen=True)
class ControlSet:
    """Admissible control values U, a finite point set or an interval."""

    kind: str  # "finite" or "interval"
    points: tuple[float, ...] = ()
    low: float = -np.inf
    high: float = np.inf

    def __post_init__(self) -> None:
        if self.kind not in ("finite", "interval"):
            raise ArgumentError(f"Unknown control set kind '{self.kind}'")
        if self.kind == "finite" and not self.points:
            raise ArgumentError("A finite control set needs at least one point")
        if self.kind == "interval" and not self.low <= self.high:
            raise ArgumentError("Interval control set needs low <= high")

    def contains(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.kind == "finite":
            return np.isclose(u[..., None], np.asarray(self.points)).any(axis=-1)
        return (u >= self.low - 1e-12) & (u <= self.high + 1e-12)

    def require(self, u: np.ndarray) -> None:
        """Raise ControlError unless every value lies in U."""
        inside = self.contains(u)
        if not np.all(inside):
            bad = np.asarray(u, dtype=float)[~inside]
            raise ControlError(f"{bad.size} control value(s) outside U, e.g. {bad.flat[0]:.6g}")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "finite":
            return rng.choice(np.asarray(self.points, dtype=float), size=size)
        low = self.low if np.isfinite(self.low) else -2.0
        high = self.high if np.isfinite(self.high) else 2.0
        return rng.uniform(low, high, size=size)

    def grid(self, points: int, centre: float = 0.0, span: float = 2.0) -> np.ndarray:
        """Finite sets return their points; intervals a uniform grid clipped to U."""
        if self.kind == "finite":
            return np.asarray(self.points, dtype=float)
        grid = np.linspace(centre - span, centre + span, points)
        return np.clip(grid, self.low, self.high)


@dataclass(frozen=True)
class CoefficientModel:
    """State equation coefficients A, B, running cost f and terminal cost g."""

    name: str
    d: int
    momentmap: MomentMap
    A: CoefficientTerm
    B: CoefficientTerm
    f: CoefficientTerm
    g: CoefficientTerm
    control_set: ControlSet
    # Every adjoint target stays affine in the state, so the exact affine projector applies.
    state_affine: bool = False
    params: dict[str, float] = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.momentmap.K

    def __post_init__(self) -> None:
        if self.momentmap.d != self.d:
            raise DimensionError(f"moment map acts on R^{self.momentmap.d}, model state is R^{self.d}")
        expected = {"A": (self.d,), "B": (self.d, self.d), "f": (), "g": ()}
        for key, shape in expected.items():
            if getattr(self, key).shape != shape:
                raise DimensionError(f"coefficient {key} must have shape {shape}")

    def terms(self) -> dict[str, CoefficientTerm]:
        return {"A": self.A, "B": self.B, "f": self.f, "g": self.g}


def _central(fn: Evaluator, t: float, x: np.ndarray, m: np.ndarray, u: np.ndarray,
             h: float, wrt: str) -> np.ndarray:
    """Central difference of fn, new axis appended last (one column per coordinate)."""
    base = x if wrt == "x" else m
    cols = []
    for c in range(base.shape[-1]):
        step = np.zeros(base.shape[-1])
        step[c] = h
        if wrt == "x":
            hi, lo = fn(t, x + step, m, u), fn(t, x - step, m, u)
        else:
            hi, lo = fn(t, x, m + step, u), fn(t, x, m - step, u)
        cols.append((hi - lo) / (2 * h))
    return np.stack(cols, axis=-1)


def check_derivatives(
    model: CoefficientModel,
    rng: np.random.Generator,
    points: int = 100,
    h: float = 1e-4,
) -> dict[str, float]:
    """Max relative error of every derivative evaluator against central differences.

    Keys are ``"<term>.<derivative>"``; ``"<term>.dxm_schwarz"`` compares the
    mixed derivative against the difference of ``dm`` in x, the transposed order.
    """
    x = rng.uniform(-2.0, 2.0, size=(points, model.d))
    m = rng.uniform(-2.0, 2.0, size=model.K)
    u = model.control_set.sample(rng, points)
    t = float(rng.uniform(0.0, 1.0))

    errors: dict[str, float] = {}
    for key, term in model.terms().items():
        errors[f"{key}.dx"] = relative_error(term.dx(t, x, m, u), _central(term.value, t, x, m, u, h, "x"))
        errors[f"{key}.dxx"] = relative_error(term.dxx(t, x, m, u), _central(term.dx, t, x, m, u, h, "x"))
        errors[f"{key}.dm"] = relative_error(term.dm(t, x, m, u), _central(term.value, t, x, m, u, h, "m"))
        errors[f"{key}.dmm"] = relative_error(term.dmm(t, x, m, u), _central(term.dm, t, x, m, u, h, "m"))
        errors[f"{key}.dxm"] = relative_error(term.dxm(t, x, m, u), _central(term.dx, t, x, m, u, h, "m"))
        # d/dx of dm lands the x axis last; swap it in front of the moment axis.
        swapped = np.swapaxes(_central(term.dm, t, x, m, u, h, "x"), -1, -2)
        errors[f"{key}.dxm_schwarz"] = relative_error(term.dxm(t, x, m, u), swapped)

    worst = max(errors, key=errors.get)
    logger.debug("Derivative check on %s: worst %s = %.3e", model.name, worst, errors[worst],
                 extra={"problem": model.name})
    return errors
