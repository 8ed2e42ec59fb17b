"""Coefficient values and derivatives at a batch of arguments theta = (t, X, m, u)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CoefficientModel, CoefficientTerm


@dataclass(frozen=True)
class TermValues:
    value: np.ndarray
    dx: np.ndarray
    dxx: np.ndarray
    dm: np.ndarray
    dmm: np.ndarray
    dxm: np.ndarray

    def __sub__(self, other: TermValues) -> TermValues:
        return TermValues(
            value=self.value - other.value,
            dx=self.dx - other.dx,
            dxx=self.dxx - other.dxx,
            dm=self.dm - other.dm,
            dmm=self.dmm - other.dmm,
            dxm=self.dxm - other.dxm,
        )


def evaluate_term(term: CoefficientTerm, t: float, x: np.ndarray, m: np.ndarray, u: np.ndarray) -> TermValues:
    return TermValues(
        value=term.value(t, x, m, u),
        dx=term.dx(t, x, m, u),
        dxx=term.dxx(t, x, m, u),
        dm=term.dm(t, x, m, u),
        dmm=term.dmm(t, x, m, u),
        dxm=term.dxm(t, x, m, u),
    )


@dataclass(frozen=True)
class Theta:
    """A, B and f with all derivatives at one time for every particle."""

    t: float
    x: np.ndarray  # (N, d)
    m: np.ndarray  # (K,)
    u: np.ndarray  # (N,)
    A: TermValues
    B: TermValues
    f: TermValues

    def delta(self, other: Theta) -> Theta:
        """Coefficient increments self - other at the same state and measure."""
        return Theta(t=self.t, x=self.x, m=self.m, u=self.u,
                     A=self.A - other.A, B=self.B - other.B, f=self.f - other.f)


def evaluate_theta(model: CoefficientModel, t: float, x: np.ndarray, m: np.ndarray, u: np.ndarray) -> Theta:
    return Theta(
        t=t, x=x, m=m, u=u,
        A=evaluate_term(model.A, t, x, m, u),
        B=evaluate_term(model.B, t, x, m, u),
        f=evaluate_term(model.f, t, x, m, u),
    )


def evaluate_terminal(model: CoefficientModel, t: float, x: np.ndarray, m: np.ndarray) -> TermValues:
    """Terminal cost g; it takes no control, so a zero placeholder is passed."""
    return evaluate_term(model.g, t, x, m, np.zeros(x.shape[0]))
