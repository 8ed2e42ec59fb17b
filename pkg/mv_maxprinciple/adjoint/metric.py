"""Weighted distance between product-space iterates, used to monitor the fixed-point iteration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import DimensionError


@dataclass(frozen=True)
class RhoProfile:
    """Per-knot squared differences; rho for any weight rate follows without recomputing them."""

    knots: np.ndarray  # (M+1,)
    dt: float
    p_sq: np.ndarray  # (M+1,) pair mean of |dP_k|^2
    q_sq: np.ndarray  # (M,) pair mean of |dQ1_k|^2 + |dQ2_k|^2

    def rho(self, kappa: float) -> float:
        weights = np.exp(kappa * self.knots)
        sup_term = float(np.max(weights * self.p_sq))
        integral = float(np.sum(self.dt * weights[:-1] * self.q_sq))
        return sup_term + 0.75 * integral


def rho_profile(a, b) -> RhoProfile:
    """Profile of two ProductAdjoint iterates on the same grid and pairs."""
    if a.P.shape != b.P.shape or a.Q1.shape != b.Q1.shape or a.Q2.shape != b.Q2.shape:
        raise DimensionError(f"iterate shapes differ: {a.P.shape} vs {b.P.shape}")
    dP = a.P - b.P  # (N1, J, M+1, d, d)
    p_sq = np.einsum("ijkab,ijkab->k", dP, dP) / (dP.shape[0] * dP.shape[1])
    dQ1 = a.Q1 - b.Q1
    dQ2 = a.Q2 - b.Q2
    q_sq = (np.einsum("ijkabw,ijkabw->k", dQ1, dQ1) + np.einsum("ijkabw,ijkabw->k", dQ2, dQ2)) / (
        dQ1.shape[0] * dQ1.shape[1]
    )
    return RhoProfile(knots=a.grid.knots, dt=a.grid.dt, p_sq=p_sq, q_sq=q_sq)


def rho_metric(a, b, kappa: float) -> float:
    return rho_profile(a, b).rho(kappa)
