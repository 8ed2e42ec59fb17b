"""Discrete dualities between the adjoints and the variational processes.

Each check pairs the terminal value of an adjoint with a variational
process (lhs) and compares it with the left-point time integral of the
printed driver pairing (rhs). Both sides are computed per particle on
the same paths, so the reported standard error is that of the pathwise
difference. ``omitted`` holds the integral of the terms the printed
relation leaves inside o(eps); ``discretization`` holds the squared drift
steps of the quadratic pairings, which vanish with dt. ``complete`` =
residual - omitted - discretization is what the discrete Ito identity
drives to zero.

The quadratic checks take ``db_scale``, which multiplies the spike
increment of the diffusion inside the assembled integrands while Y, Yhat
and the adjoints stay as solved.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..adjoint.first import FirstOrderAdjoint
from ..adjoint.second import SecondOrderAdjoint
from ..adjoint.third import ProductAdjoint
from ..coeffs.model import CoefficientModel
from ..exceptions import ArgumentError, IndependenceError
from ..forward.tilde import copy_first_moment, copy_second_moment
from ..variational.processes import (
    KnotSources,
    VariationalBundle,
    first_variation_increment,
    knot_sources,
    second_variation_sources,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DualityResidual:
    name: str
    eps: float
    lhs: float
    rhs: float
    omitted: float
    paired_stderr: float
    samples: int
    discretization: float = 0.0

    @property
    def residual(self) -> float:
        return self.lhs - self.rhs

    @property
    def complete(self) -> float:
        return self.residual - self.omitted - self.discretization

    def tolerance(self, sigmas: float, rel: float) -> float:
        return sigmas * self.paired_stderr + rel * abs(self.lhs)

    def passes(self, sigmas: float, rel: float) -> bool:
        return abs(self.complete) <= self.tolerance(sigmas, rel)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "eps": self.eps,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "residual": self.residual,
            "omitted": self.omitted,
            "discretization": self.discretization,
            "complete": self.complete,
            "paired_stderr": self.paired_stderr,
            "samples": self.samples,
        }


def _summarize(
    name: str,
    eps: float,
    lhs_i: np.ndarray,
    rhs_i: np.ndarray,
    omitted_i: np.ndarray,
    discretization_i: np.ndarray | None = None,
) -> DualityResidual:
    if discretization_i is None:
        discretization_i = np.zeros_like(omitted_i)
    diff = lhs_i - rhs_i - omitted_i - discretization_i
    n = diff.shape[0]
    stderr = float(diff.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    result = DualityResidual(
        name=name,
        eps=eps,
        lhs=float(lhs_i.mean()),
        rhs=float(rhs_i.mean()),
        omitted=float(omitted_i.mean()),
        paired_stderr=stderr,
        samples=n,
        discretization=float(discretization_i.mean()),
    )
    logger.debug(
        "Duality %s: lhs=%.6g rhs=%.6g complete=%.3e (stderr %.3e)",
        name, result.lhs, result.rhs, result.complete, stderr,
        extra={"check": name, "eps": eps},
    )
    return result


def _require_same_base(bundle: VariationalBundle, adjoint_p: np.ndarray) -> None:
    if adjoint_p.shape[:2] != bundle.base.states.shape[:2]:
        raise ArgumentError(
            f"adjoint solved on {adjoint_p.shape[:2]} particles/knots, bundle has {bundle.base.states.shape[:2]}"
        )


def _cost_dual(model: CoefficientModel, src: KnotSources, x: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """<f_x, Y> + <Dpsi(X)^T E[f_m], Y> per particle."""
    th = src.theta
    dpsi = model.momentmap.dpsi(x)
    return np.einsum("nx,nx->n", th.f.dx, Y) + np.einsum("k,nkd,nd->n", th.f.dm.mean(axis=0), dpsi, Y)


def check_duality_pY(model: CoefficientModel, bundle: VariationalBundle, first: FirstOrderAdjoint) -> DualityResidual:
    """E<p_T, Y_T> against the integral of <p, dA> + <q, dB> - <f_x, Y> - E~[f_mu] Y."""
    _require_same_base(bundle, first.p)
    base, M, dt = bundle.base, bundle.base.grid.steps, bundle.base.grid.dt
    rhs = np.zeros(base.N)
    for k in range(M):
        src = knot_sources(model, base, bundle.table, k)
        Y = bundle.Y[:, k]
        rhs -= dt * _cost_dual(model, src, base.states[:, k], Y)
        if src.delta is not None:
            rhs += dt * (
                np.einsum("na,na->n", first.p[:, k], src.delta.A.value)
                + np.einsum("nab,nab->n", first.q[:, k], src.delta.B.value)
            )
    lhs = np.einsum("nd,nd->n", first.p[:, M], bundle.Y[:, M])
    return _summarize("pY", bundle.spike.eps, lhs, rhs, np.zeros(base.N))


def check_duality_pZ(model: CoefficientModel, bundle: VariationalBundle, first: FirstOrderAdjoint) -> DualityResidual:
    """E<p_T, Z_T> against the quadratic source pairings; the spike-linear Y terms are reported as omitted."""
    _require_same_base(bundle, first.p)
    base, M, dt = bundle.base, bundle.base.grid.steps, bundle.base.grid.dt
    mm = model.momentmap
    rhs = np.zeros(base.N)
    omitted = np.zeros(base.N)
    for k in range(M):
        src = knot_sources(model, base, bundle.table, k)
        x = base.states[:, k]
        Y, Z = bundle.Y[:, k], bundle.Z[:, k]
        v, w = copy_first_moment(mm, x, Y), copy_second_moment(mm, x, Y)
        drift, diffusion = second_variation_sources(src, Y, v, w)
        p, q = first.p[:, k], first.q[:, k]
        full = np.einsum("na,na->n", p, drift) + np.einsum("nab,nab->n", q, diffusion)
        spike_part = np.zeros(base.N)
        if src.delta is not None:
            dA, dB = src.delta.A, src.delta.B
            spike_part = np.einsum("na,na->n", p, np.einsum("nax,nx->na", dA.dx, Y) + dA.dm @ v) + np.einsum(
                "nab,nab->n", q, np.einsum("nabx,nx->nab", dB.dx, Y) + dB.dm @ v
            )
        rhs += dt * (full - spike_part - _cost_dual(model, src, x, Z))
        omitted += dt * spike_part
    lhs = np.einsum("nd,nd->n", first.p[:, M], bundle.Z[:, M])
    return _summarize("pZ", bundle.spike.eps, lhs, rhs, omitted)


def _drift_increment(model: CoefficientModel, src: KnotSources, x: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """dt-free drift of the first variation at one knot."""
    drift, _ = first_variation_increment(src, Y, copy_first_moment(model.momentmap, x, Y))
    return drift


def _sym_outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """sum_w a_w b_w^T + b_w a_w^T for column stacks of shape (N, d, W)."""
    return np.einsum("naw,nbw->nab", a, b) + np.einsum("naw,nbw->nab", b, a)


def second_order_bracket(
    src: KnotSources,
    Y: np.ndarray,
    v: np.ndarray,
    P: np.ndarray,
    Q: np.ndarray,
    delta_B: np.ndarray | None = None,
) -> np.ndarray:
    """Pairing of (P, Q) with the parts of d(Y Y^T) the homogeneous driver leaves over.

    <P, (A_m v) Y^T + Y (A_m v)^T + (B_x Y)(B_m v)^T + (B_m v)(B_x Y)^T + (B_m v)(B_m v)^T + dB dB^T>
    + sum_k <Q^k, (B_m^k v) Y^T + Y (B_m^k v)^T>, per particle.
    """
    th = src.theta
    AmV = th.A.dm @ v  # (N, d)
    BmV = th.B.dm @ v  # (N, d, d), column k = B_m^k v
    BxY = np.einsum("nabx,nx->nab", th.B.dx, Y)
    matrix = (
        _sym_outer(AmV[:, :, None], Y[:, :, None])
        + _sym_outer(BxY, BmV)
        + np.einsum("naw,nbw->nab", BmV, BmV)
    )
    value = (
        np.einsum("nab,nab->n", P, matrix)
        + np.einsum("nabw,naw,nb->n", Q, BmV, Y)
        + np.einsum("nabw,na,nbw->n", Q, Y, BmV)
    )
    if delta_B is not None:
        value = value + np.einsum("nab,naw,nbw->n", P, delta_B, delta_B)
    return value


def pyy_integrand(
    model: CoefficientModel,
    src: KnotSources,
    x: np.ndarray,
    Y: np.ndarray,
    P: np.ndarray,
    Q: np.ndarray,
    p: np.ndarray,
    q: np.ndarray,
    delta_A: np.ndarray | None,
    delta_B: np.ndarray | None,
) -> tuple[np.ndarray, np.ndarray]:
    """(printed, omitted) integrands of the P-duality per particle at one knot."""
    th = src.theta
    mm = model.momentmap
    v = copy_first_moment(mm, x, Y)
    Hxx = th.f.dxx + np.einsum("naxy,na->nxy", th.A.dxx, p) + np.einsum("nabxy,nab->nxy", th.B.dxx, q)
    Hm = th.f.dm + np.einsum("nak,na->nk", th.A.dm, p) + np.einsum("nabk,nab->nk", th.B.dm, q)
    printed = (
        second_order_bracket(src, Y, v, P, Q, delta_B)
        - np.einsum("nxy,nx,ny->n", Hxx, Y, Y)
        - np.einsum("k,nkab,na,nb->n", Hm.mean(axis=0), mm.d2psi(x), Y, Y)
    )
    omitted = np.zeros(Y.shape[0])
    if delta_B is not None:
        BxY = np.einsum("nabx,nx->nab", th.B.dx, Y)
        BmV = th.B.dm @ v
        omitted = omitted + np.einsum("nab,nab->n", P, _sym_outer(BxY, delta_B) + _sym_outer(BmV, delta_B))
        omitted = omitted + np.einsum("nabw,naw,nb->n", Q, delta_B, Y) + np.einsum("nabw,na,nbw->n", Q, Y, delta_B)
    if delta_A is not None:
        omitted = omitted + np.einsum("nab,nab->n", P, _sym_outer(delta_A[:, :, None], Y[:, :, None]))
    return printed, omitted


def check_duality_PYY(
    model: CoefficientModel,
    bundle: VariationalBundle,
    first: FirstOrderAdjoint,
    second: SecondOrderAdjoint,
    db_scale: float = 1.0,
) -> DualityResidual:
    """E<P_T, Y_T Y_T^T>; the printed integrand carries the <P, dB dB^T> quadratic-variation term."""
    _require_same_base(bundle, second.P)
    base, M, dt = bundle.base, bundle.base.grid.steps, bundle.base.grid.dt
    rhs = np.zeros(base.N)
    omitted = np.zeros(base.N)
    discretization = np.zeros(base.N)
    for k in range(M):
        src = knot_sources(model, base, bundle.table, k)
        delta = src.delta
        printed, extra = pyy_integrand(
            model, src, base.states[:, k], bundle.Y[:, k], second.P[:, k], second.Q[:, k],
            first.p[:, k], first.q[:, k],
            None if delta is None else delta.A.value,
            None if delta is None else db_scale * delta.B.value,
        )
        drift = _drift_increment(model, src, base.states[:, k], bundle.Y[:, k])
        rhs += dt * printed
        omitted += dt * extra
        # The squared drift step of Y Y^T is of order dt / eps against the lhs.
        discretization += dt * dt * np.einsum("nab,na,nb->n", second.P[:, k], drift, drift)
    Y_T = bundle.Y[:, M]
    lhs = np.einsum("nab,na,nb->n", second.P[:, M], Y_T, Y_T)
    return _summarize("PYY", bundle.spike.eps, lhs, rhs, omitted, discretization)


def third_integrand(
    source: np.ndarray,
    Y1: np.ndarray,
    Y2: np.ndarray,
    PP: np.ndarray,
    QQ1: np.ndarray,
    QQ2: np.ndarray,
    delta_A1: np.ndarray | None,
    delta_B1: np.ndarray | None,
    delta_A2: np.ndarray | None,
    delta_B2: np.ndarray | None,
) -> tuple[np.ndarray, np.ndarray]:
    """(printed, omitted) pair integrands averaged over j, one value per row i.

    The printed form is -<F, Y Yhat^T>; independent noises leave no
    dB dBhat^T covariation, so no term quadratic in the spike appears.
    """
    printed = -np.einsum("ijab,ia,jb->i", source, Y1, Y2) / Y2.shape[0]
    omitted = np.zeros(Y1.shape[0])
    if delta_A1 is not None:
        omitted += np.einsum("ijab,ia,jb->i", PP, delta_A1, Y2)
    if delta_A2 is not None:
        omitted += np.einsum("ijab,ia,jb->i", PP, Y1, delta_A2)
    if delta_B1 is not None:
        omitted += np.einsum("ijabw,iaw,jb->i", QQ1, delta_B1, Y2)
    if delta_B2 is not None:
        omitted += np.einsum("ijabw,ia,jbw->i", QQ2, Y1, delta_B2)
    return printed, omitted / Y2.shape[0]


def check_duality_third(
    model: CoefficientModel,
    bundle1: VariationalBundle,
    bundle2: VariationalBundle,
    third: ProductAdjoint,
    db_scale: float = 1.0,
) -> DualityResidual:
    """Pair-mean E<PP_T, Y_T Yhat_T^T>; the standard error counts N1 rows, not N1 * J pairs."""
    b1, b2 = bundle1.base, bundle2.base
    if (b1.seed, b1.namespace) == (b2.seed, b2.namespace):
        raise IndependenceError("duality pairing needs bundles from independent noise streams")
    if third.source is None:
        raise ArgumentError("pair adjoint carries no source; use the solution returned by the solver")
    idx2 = third.second_index
    if third.pairs != (b1.N, len(idx2)):
        raise ArgumentError(f"pair adjoint has {third.pairs} pairs, bundles give {(b1.N, len(idx2))}")
    M, dt = b1.grid.steps, b1.grid.dt
    rhs = np.zeros(b1.N)
    omitted = np.zeros(b1.N)
    discretization = np.zeros(b1.N)
    for k in range(M):
        src1 = knot_sources(model, b1, bundle1.table, k)
        src2 = knot_sources(model, b2, bundle2.table, k)
        d1, d2 = src1.delta, src2.delta
        printed, extra = third_integrand(
            third.source[:, :, k], bundle1.Y[:, k], bundle2.Y[idx2, k],
            third.P[:, :, k], third.Q1[:, :, k], third.Q2[:, :, k],
            None if d1 is None else d1.A.value,
            None if d1 is None else db_scale * d1.B.value,
            None if d2 is None else d2.A.value[idx2],
            None if d2 is None else db_scale * d2.B.value[idx2],
        )
        drift1 = _drift_increment(model, src1, b1.states[:, k], bundle1.Y[:, k])
        drift2 = _drift_increment(model, src2, b2.states[:, k], bundle2.Y[:, k])[idx2]
        rhs += dt * printed
        omitted += dt * extra
        discretization += dt * dt * np.einsum("ijab,ia,jb->i", third.P[:, :, k], drift1, drift2) / len(idx2)
    lhs = np.einsum("ijab,ia,jb->i", third.P[:, :, M], bundle1.Y[:, M], bundle2.Y[idx2, M]) / len(idx2)
    return _summarize("third", bundle1.spike.eps, lhs, rhs, omitted, discretization)
