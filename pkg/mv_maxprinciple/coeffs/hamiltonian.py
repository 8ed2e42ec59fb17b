"""Hamiltonian <A, p> + <B, q> +/- f and its derivatives, by linearity in (p, q)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import DimensionError
from .model import CoefficientModel
from .moments import MomentMap

# Printed convention <A,p> + <B,q> - f; the solvers and checks use +f (cost increment form).
PRINTED_SIGN = -1.0
COST_SIGN = 1.0


@dataclass(frozen=True)
class HamiltonianEval:
    """Batched Hamiltonian value and derivatives at (t, X^i, m, u^i, p^i, q^i).

    Measure derivatives are stored as moment derivatives; the Lions forms
    are recovered through the moment map by the methods below.
    """

    value: np.ndarray  # (N,)
    H_x: np.ndarray  # (N, d)
    H_xx: np.ndarray  # (N, d, d)
    H_m: np.ndarray  # (N, K)
    H_mm: np.ndarray  # (N, K, K)
    H_xm: np.ndarray  # (N, d, K)
    momentmap: MomentMap

    def H_mu(self, y: np.ndarray) -> np.ndarray:
        """d_mu H(theta^i)(y^i), shape (N, d)."""
        return np.einsum("nk,nkd->nd", self.H_m, self.momentmap.dpsi(y))

    def H_ymu(self, y: np.ndarray) -> np.ndarray:
        """d_y d_mu H(theta^i)(y^i), shape (N, d, d)."""
        return np.einsum("nk,nkab->nab", self.H_m, self.momentmap.d2psi(y))

    def H_xmu(self, y: np.ndarray) -> np.ndarray:
        """d_x d_mu H(theta^i)(y^i), rows indexed by x, columns by y; shape (N, d, d)."""
        return np.einsum("nxk,nkd->nxd", self.H_xm, self.momentmap.dpsi(y))

    def H_mumu(self, y: np.ndarray, y2: np.ndarray) -> np.ndarray:
        """d_mu d_mu H(theta^i)(y^i, y2^i), shape (N, d, d)."""
        mm = self.momentmap
        return np.einsum("nka,nkl,nlb->nab", mm.dpsi(y), self.H_mm, mm.dpsi(y2))


def hamiltonian(
    model: CoefficientModel,
    t: float,
    x: np.ndarray,
    m: np.ndarray,
    u: np.ndarray,
    p: np.ndarray,
    q: np.ndarray,
    cost_sign: float = PRINTED_SIGN,
) -> HamiltonianEval:
    """Evaluate the Hamiltonian; u outside U raises ControlError."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    n, d = x.shape
    if p.shape != (n, d) or q.shape != (n, d, d) or u.shape != (n,):
        raise DimensionError(
            f"expected p {(n, d)}, q {(n, d, d)}, u {(n,)}; got {p.shape}, {q.shape}, {u.shape}"
        )
    model.control_set.require(u)
    A, B, f = model.A, model.B, model.f
    s = float(cost_sign)

    def pair(a_eval, b_eval, f_eval, a_sub: str, b_sub: str) -> np.ndarray:
        return (
            np.einsum(a_sub, a_eval(t, x, m, u), p)
            + np.einsum(b_sub, b_eval(t, x, m, u), q)
            + s * f_eval(t, x, m, u)
        )

    return HamiltonianEval(
        value=pair(A.value, B.value, f.value, "na,na->n", "nab,nab->n"),
        H_x=pair(A.dx, B.dx, f.dx, "nax,na->nx", "nabx,nab->nx"),
        H_xx=pair(A.dxx, B.dxx, f.dxx, "naxy,na->nxy", "nabxy,nab->nxy"),
        H_m=pair(A.dm, B.dm, f.dm, "nak,na->nk", "nabk,nab->nk"),
        H_mm=pair(A.dmm, B.dmm, f.dmm, "nakl,na->nkl", "nabkl,nab->nkl"),
        H_xm=pair(A.dxm, B.dxm, f.dxm, "naxk,na->nxk", "nabxk,nab->nxk"),
        momentmap=model.momentmap,
    )
