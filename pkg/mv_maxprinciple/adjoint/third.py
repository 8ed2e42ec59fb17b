"""Pair-indexed second-level adjoint on the product of two independent ensembles.

Pair (i, j) couples particle i of ensemble 1 with particle j of ensemble 2;
arrays carry the pair axes first, so P has shape (N1, J, M+1, d, d). The
expectation over one copy is a row or column mean of the pair array. The
equation is solved by fixed-point iteration: each sweep is a standard
backward equation whose single-copy averages are frozen at the previous
iterate.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from ..coeffs.model import CoefficientModel
from ..config import AdjointConfig
from ..exceptions import ArgumentError, DimensionError, DivergenceError, IndependenceError, NonConvergenceError
from ..forward.ensemble import ParticleEnsemble, terminal_at, theta_at
from ..forward.grid import TimeGrid
from ..forward.rng import derived_generator
from ..parallel import chunk_bounds, ordered_map
from .first import FirstOrderAdjoint, hamiltonian_at
from .metric import RhoProfile, rho_profile
from .projection import EnsemblePath, PairPath, implicit_step, make_projector
from .second import SecondOrderAdjoint

logger = logging.getLogger(__name__)

PLAIN = "plain"
SYMMETRIZED = "symmetrized"
CONTRACTION_BOUND = 0.5
# Bound on mirror_gap for the symmetrized variant; anything above roundoff is a bug.
MIRROR_ATOL = 1e-8
MAX_KAPPA_DOUBLINGS = 4
_SUBSAMPLE_STREAM = 7


@dataclass(frozen=True)
class ProductAdjoint:
    grid: TimeGrid
    P: np.ndarray  # (N1, J, M+1, d, d)
    Q1: np.ndarray  # (N1, J, M, d, d, d), integrand against dW of ensemble 1
    Q2: np.ndarray  # (N1, J, M, d, d, d), integrand against dW of ensemble 2
    second_index: np.ndarray  # (J,) rows of ensemble 2 used as second factor
    source: np.ndarray | None = None  # (N1, J, M, d, d) inhomogeneous term, set on the returned solution

    @property
    def pairs(self) -> tuple[int, int]:
        return self.P.shape[0], self.P.shape[1]

    @classmethod
    def zeros(cls, grid: TimeGrid, n1: int, second_index: np.ndarray, d: int) -> ProductAdjoint:
        J, M = len(second_index), grid.steps
        return cls(
            grid=grid,
            P=np.zeros((n1, J, M + 1, d, d)),
            Q1=np.zeros((n1, J, M, d, d, d)),
            Q2=np.zeros((n1, J, M, d, d, d)),
            second_index=np.asarray(second_index),
        )


@dataclass
class PicardTrace:
    kappa: float
    rho: list[float] = field(default_factory=list)
    converged: bool = False
    profiles: list[RhoProfile] = field(default_factory=list, repr=False)

    @property
    def iterations(self) -> int:
        return len(self.rho)

    @property
    def ratios(self) -> list[float]:
        return [b / a for a, b in zip(self.rho, self.rho[1:]) if a > 0]

    def reweight(self, kappa: float) -> None:
        """Recompute the history under a new weight rate from the stored profiles."""
        self.kappa = kappa
        self.rho = [p.rho(kappa) for p in self.profiles]

    def to_dict(self) -> dict:
        return {
            "kappa": self.kappa,
            "iterations": self.iterations,
            "converged": self.converged,
            "rho": self.rho,
            "ratios": self.ratios,
        }


@dataclass(frozen=True)
class PairSide:
    """Per-particle coefficient data of one ensemble along its path, knots 0..M-1."""

    dpsi: np.ndarray  # (N, M, K, d)
    Ax: np.ndarray  # (N, M, d, d)
    Am: np.ndarray  # (N, M, d, K)
    Bx: np.ndarray  # (N, M, d, d, d)
    Bm: np.ndarray  # (N, M, d, d, K)
    P: np.ndarray  # (N, M, d, d)
    Q: np.ndarray  # (N, M, d, d, d)
    Hxm: np.ndarray  # (N, M, d, K)
    Hmm_mean: np.ndarray  # (M, K, K)
    BPB_mean: np.ndarray  # (M, K, K) mean of sum_w B_m^wT P B_m^w
    dpsi_T: np.ndarray  # (N, K, d)
    gxm_T: np.ndarray  # (N, d, K)
    gmm_mean_T: np.ndarray  # (K, K)


def pair_side(
    model: CoefficientModel,
    ensemble: ParticleEnsemble,
    first: FirstOrderAdjoint,
    second: SecondOrderAdjoint,
) -> PairSide:
    N, M, d, K = ensemble.N, ensemble.grid.steps, ensemble.d, model.K
    dpsi = np.empty((N, M, K, d))
    Ax = np.empty((N, M, d, d))
    Am = np.empty((N, M, d, K))
    Bx = np.empty((N, M, d, d, d))
    Bm = np.empty((N, M, d, d, K))
    Hxm = np.empty((N, M, d, K))
    Hmm_mean = np.empty((M, K, K))
    BPB_mean = np.empty((M, K, K))
    for k in range(M):
        theta = theta_at(model, ensemble, k)
        H = hamiltonian_at(model, ensemble, k, first.p[:, k], first.q_at(k))
        dpsi[:, k] = model.momentmap.dpsi(ensemble.states[:, k, :])
        Ax[:, k] = theta.A.dx
        Am[:, k] = theta.A.dm
        Bx[:, k] = theta.B.dx
        Bm[:, k] = theta.B.dm
        Hxm[:, k] = H.H_xm
        Hmm_mean[k] = H.H_mm.mean(axis=0)
        BPB_mean[k] = np.einsum("nawk,nab,nbwl->kl", theta.B.dm, second.P[:, k], theta.B.dm) / N
    g = terminal_at(model, ensemble)
    return PairSide(
        dpsi=dpsi, Ax=Ax, Am=Am, Bx=Bx, Bm=Bm,
        P=second.P[:, :M], Q=second.Q,
        Hxm=Hxm, Hmm_mean=Hmm_mean, BPB_mean=BPB_mean,
        dpsi_T=model.momentmap.dpsi(ensemble.states[:, M, :]),
        gxm_T=g.dxm,
        gmm_mean_T=g.dmm.mean(axis=0),
    )


def pair_source(s1: PairSide, rows1: np.ndarray, s2: PairSide, rows2: np.ndarray, k: int) -> np.ndarray:
    """Inhomogeneous term for pairs (rows1 x rows2) at knot k, shape (n1, n2, d, d).

    Copy 1 supplies theta, P and Q; copy 2 supplies the second measure
    direction Dpsi(Xhat) and the mixed H_xm(thetahat).
    """
    D1 = s1.dpsi[rows1, k]
    D2 = s2.dpsi[rows2, k]
    P1 = s1.P[rows1, k]
    P1s = P1 + np.swapaxes(P1, 1, 2)
    Q1 = s1.Q[rows1, k]
    Q1s = Q1 + np.swapaxes(Q1, 1, 2)
    Am1 = s1.Am[rows1, k]
    Bx1 = s1.Bx[rows1, k]
    Bm1 = s1.Bm[rows1, k]
    outer = s1.Hmm_mean[k] + s1.BPB_mean[k]
    return (
        np.einsum("ika,kl,jlb->ijab", D1, outer, D2)
        + 2.0 * np.einsum("ika,jbk->ijab", D1, s2.Hxm[rows2, k])
        + np.einsum("iab,ibk,jkc->ijac", P1s, Am1, D2)
        + np.einsum("iawx,iab,ibwl,jlc->ijxc", Bx1, P1s, Bm1, D2)
        + np.einsum("iabw,ibwl,jlc->ijac", Q1s, Bm1, D2)
    )


def pair_terminal(s1: PairSide, rows1: np.ndarray, s2: PairSide, rows2: np.ndarray) -> np.ndarray:
    """E~[g_mumu](X_T, Xhat_T) + 2 g_xmu(Xhat_T)(X_T) per pair."""
    D1 = s1.dpsi_T[rows1]
    D2 = s2.dpsi_T[rows2]
    return np.einsum("ika,kl,jlb->ijab", D1, s1.gmm_mean_T, D2) + 2.0 * np.einsum(
        "ika,jbk->ijab", D1, s2.gxm_T[rows2]
    )


def _swap(a: np.ndarray) -> np.ndarray:
    """(n2, n1, d, d) array of the reversed pairing as an (n1, n2, d, d) array of transposes."""
    return np.transpose(a, (1, 0, 3, 2))


class _FrozenSolver:
    """One fixed-point sweep: a pair BSDE with single-copy averages taken from a given iterate."""

    def __init__(
        self,
        model: CoefficientModel,
        bases: tuple[ParticleEnsemble, ParticleEnsemble],
        sides: tuple[PairSide, PairSide],
        second_index: np.ndarray,
        variant: str,
        backend: str,
        adjoint: AdjointConfig,
        workers: int,
    ):
        self.grid = bases[0].grid
        self.s1, self.s2 = sides
        self.idx2 = second_index
        self.rows1 = np.arange(bases[0].N)
        self.variant = variant
        self.adjoint = adjoint
        self.workers = workers
        self.d = bases[0].d
        path = PairPath(EnsemblePath(model, bases[0]), EnsemblePath(model, bases[1]), second_index)
        self.projector = make_projector(backend, model, path, degree=adjoint.degree, ridge=adjoint.ridge)
        self._sources: dict[int, np.ndarray] = {}

    def _chunked(self, fn) -> np.ndarray:
        bounds = chunk_bounds(len(self.rows1), self.workers)
        return np.concatenate(ordered_map(lambda b: fn(self.rows1[b[0]:b[1]]), bounds, self.workers), axis=0)

    def terminal(self) -> np.ndarray:
        def block(rows: np.ndarray) -> np.ndarray:
            value = pair_terminal(self.s1, rows, self.s2, self.idx2)
            if self.variant == SYMMETRIZED:
                value = 0.5 * (value + _swap(pair_terminal(self.s2, self.idx2, self.s1, rows)))
            return value

        return self._chunked(block)

    def source(self, k: int) -> np.ndarray:
        """Iterate-independent source at knot k, assembled once per knot."""
        if k not in self._sources:

            def block(rows: np.ndarray) -> np.ndarray:
                value = pair_source(self.s1, rows, self.s2, self.idx2, k)
                if self.variant == SYMMETRIZED:
                    value = 0.5 * (value + _swap(pair_source(self.s2, self.idx2, self.s1, rows, k)))
                return value

            self._sources[k] = self._chunked(block)
        return self._sources[k]

    def frozen_terms(self, k: int, previous: ProductAdjoint) -> np.ndarray:
        """Source plus the single-copy averages of the previous iterate at knot k."""
        s1, s2, idx2 = self.s1, self.s2, self.idx2
        phi = previous.P[:, :, k]
        psi1 = previous.Q1[:, :, k]
        psi2 = previous.Q2[:, :, k]
        n1, J = phi.shape[:2]
        # Average over copy 1 (rows) leaves a function of j; over copy 2 (columns) one of i.
        W1 = (
            np.einsum("lak,ljab->jkb", s1.Am[:, k], phi) + np.einsum("lawk,ljabw->jkb", s1.Bm[:, k], psi1)
        ) / n1
        V2 = (
            np.einsum("ilab,lbk->iak", phi, s2.Am[idx2, k])
            + np.einsum("ilabw,lbwk->iak", psi2, s2.Bm[idx2, k])
        ) / J
        return (
            self.source(k)
            + np.einsum("ika,jkb->ijab", s1.dpsi[:, k], W1)
            + np.einsum("iak,jkb->ijab", V2, s2.dpsi[idx2, k])
        )

    def solve(self, previous: ProductAdjoint) -> ProductAdjoint:
        grid, d = self.grid, self.d
        current = ProductAdjoint.zeros(grid, len(self.rows1), self.idx2, d)
        P, Q1, Q2 = current.P, current.Q1, current.Q2
        n1, J = current.pairs
        P[:, :, grid.steps] = self.terminal()
        for k in range(grid.steps - 1, -1, -1):
            cond, Z = self.projector.project(k, P[:, :, k + 1].reshape(n1 * J, d, d))
            Q1[:, :, k] = Z[..., :d].reshape(n1, J, d, d, d)
            Q2[:, :, k] = Z[..., d:].reshape(n1, J, d, d, d)
            Ax1 = self.s1.Ax[:, k]
            Ax2 = self.s2.Ax[self.idx2, k]
            fixed = (
                self.frozen_terms(k, previous)
                + np.einsum("iawx,ijabw->ijxb", self.s1.Bx[:, k], Q1[:, :, k])
                + np.einsum("ijabw,jbwy->ijay", Q2[:, :, k], self.s2.Bx[self.idx2, k])
            )

            def driver(Pk: np.ndarray) -> np.ndarray:
                return np.einsum("iax,ijab->ijxb", Ax1, Pk) + np.einsum("ijab,jby->ijay", Pk, Ax2) + fixed

            P[:, :, k] = implicit_step(
                cond.reshape(n1, J, d, d), driver, grid.dt, self.adjoint.sweep_tol, self.adjoint.max_sweeps,
                step=k,
            )
            if not np.all(np.isfinite(P[:, :, k])):
                raise DivergenceError(f"pair adjoint is non-finite at step {k}", step=k)
        return current


def second_index_for(base2: ParticleEnsemble, subsample: int, seed: int) -> np.ndarray:
    """All of ensemble 2, or a sorted random subset of ``subsample`` particles shared by every row."""
    if subsample <= 0 or subsample >= base2.N:
        return np.arange(base2.N)
    rng = derived_generator(seed, base2.namespace, _SUBSAMPLE_STREAM)
    return np.sort(rng.choice(base2.N, size=subsample, replace=False))


def mirror_gap(product: ProductAdjoint, swapped: ProductAdjoint) -> float:
    """Largest entry of P^{ij} - (P'^{ji})^T and Q1^{ij} - (Q2'^{ji})^T, where P' solves with the ensembles swapped.

    Both solves must use dense pairs, so the pair axes of one are those of the other reversed.
    """
    n1, n2 = product.pairs
    if swapped.pairs != (n2, n1):
        raise DimensionError(f"mirrored solve has pairs {swapped.pairs}, expected {(n2, n1)}")
    P = np.transpose(swapped.P, (1, 0, 2, 4, 3))
    Q1 = np.transpose(swapped.Q2, (1, 0, 2, 4, 3, 5))
    Q2 = np.transpose(swapped.Q1, (1, 0, 2, 4, 3, 5))
    return float(max(
        np.max(np.abs(product.P - P)), np.max(np.abs(product.Q1 - Q1)), np.max(np.abs(product.Q2 - Q2)),
    ))


def solve_third_adjoint_picard(
    model: CoefficientModel,
    base1: ParticleEnsemble,
    base2: ParticleEnsemble,
    first: tuple[FirstOrderAdjoint, FirstOrderAdjoint],
    second: tuple[SecondOrderAdjoint, SecondOrderAdjoint],
    variant: str = PLAIN,
    kappa: float = 10.0,
    tol: float = 1e-10,
    max_iter: int = 30,
    backend: str = "deterministic",
    adjoint: AdjointConfig | None = None,
    subsample: int = 0,
    workers: int = 1,
) -> tuple[ProductAdjoint, PicardTrace]:
    """Iterate the frozen solve from zero until rho(current, previous) < tol.

    ``first`` and ``second`` hold the adjoints of each ensemble in order.
    When the successive rho ratio exceeds CONTRACTION_BOUND the weight rate
    kappa is doubled (at most MAX_KAPPA_DOUBLINGS times) and the history
    recomputed from stored profiles.
    """
    if variant not in (PLAIN, SYMMETRIZED):
        raise ArgumentError(f"Unknown variant '{variant}'")
    if (base1.seed, base1.namespace) == (base2.seed, base2.namespace):
        raise IndependenceError(
            f"ensembles share the noise stream (seed={base1.seed}, namespace={base1.namespace})"
        )
    if base1.grid != base2.grid or base1.d != base2.d:
        raise ArgumentError("ensembles must share the time grid and dimension")
    adjoint = adjoint or AdjointConfig()

    idx2 = second_index_for(base2, subsample, base1.seed)
    sides = (pair_side(model, base1, first[0], second[0]), pair_side(model, base2, first[1], second[1]))
    solver = _FrozenSolver(model, (base1, base2), sides, idx2, variant, backend, adjoint, workers)

    trace = PicardTrace(kappa=kappa)
    previous = ProductAdjoint.zeros(base1.grid, base1.N, idx2, base1.d)
    doublings = 0
    for n in range(1, max_iter + 1):
        current = solver.solve(previous)
        trace.profiles.append(rho_profile(current, previous))
        trace.rho.append(trace.profiles[-1].rho(trace.kappa))
        while (
            len(trace.rho) >= 2
            and trace.rho[-1] >= tol
            and trace.rho[-2] > 0
            and trace.rho[-1] / trace.rho[-2] > CONTRACTION_BOUND
            and doublings < MAX_KAPPA_DOUBLINGS
        ):
            doublings += 1
            trace.reweight(2.0 * trace.kappa)
            logger.warning("rho failed to contract; retrying with kappa=%g", trace.kappa)
        logger.debug("Fixed-point iteration %d: rho=%.3e", n, trace.rho[-1])
        if trace.rho[-1] < tol:
            trace.converged = True
            current = dataclasses.replace(
                current, source=np.stack([solver.source(k) for k in range(base1.grid.steps)], axis=2)
            )
            logger.info(
                "Pair adjoint converged in %d iteration(s) (%s, %d x %d pairs)",
                n, variant, base1.N, len(idx2),
            )
            return current, trace
        previous = current
    raise NonConvergenceError(
        f"pair adjoint did not converge in {max_iter} iterations (last rho {trace.rho[-1]:.3e})",
        history=list(trace.rho),
    )
