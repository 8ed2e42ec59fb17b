"""Independent-copy averages over the empirical measure.

An average over an independent copy of the particle system, taken at
particle i, comes in two orientations:

* ``coefficient-at-copy``: (1/N) sum_j K(i, X^j) aux^j, the coefficient
  belongs to particle i and is evaluated at the copy's state;
* ``copy-at-coefficient``: (1/N) sum_j K(j, X^i)^T aux^j, the coefficient
  belongs to the copy and is evaluated at particle i's state.

:func:`tilde_average` is the exact pairwise O(N^2) form. When the kernel
comes from moment derivatives, K(i, y) = C^i Dpsi(y), the sums factorize
through K-vectors and the O(N K) helpers below apply.
"""

from __future__ import annotations

from collections.abc import Callable

import numpy as np

from ..coeffs.moments import MomentMap
from ..exceptions import ArgumentError, DimensionError

COEFFICIENT_AT_COPY = "coefficient-at-copy"
COPY_AT_COEFFICIENT = "copy-at-coefficient"
MODES = (COEFFICIENT_AT_COPY, COPY_AT_COEFFICIENT)

# (coefficient particle indices (n,), evaluation points (n, d)) -> (n, a, b)
PairKernel = Callable[[np.ndarray, np.ndarray], np.ndarray]


def tilde_average(mode: str, kernel: PairKernel, states: np.ndarray, aux: np.ndarray) -> np.ndarray:
    """Pairwise reference average; one row of pairs at a time."""
    if mode not in MODES:
        raise ArgumentError(f"Unknown averaging mode '{mode}', expected one of {', '.join(MODES)}")
    states = np.asarray(states, dtype=float)
    aux = np.asarray(aux, dtype=float)
    n = states.shape[0]
    if aux.shape[0] != n:
        raise DimensionError(f"aux has {aux.shape[0]} rows, ensemble has {n}")

    everyone = np.arange(n)
    rows = []
    for i in range(n):
        mine = np.full(n, i)
        if mode == COEFFICIENT_AT_COPY:
            block = kernel(mine, states)  # K(i, X^j), (n, a, b)
            rows.append(np.einsum("jab,jb->a", block, aux) / n)
        else:
            block = kernel(everyone, states[mine])  # K(j, X^i), (n, a, b)
            rows.append(np.einsum("jab,ja->b", block, aux) / n)
    return np.stack(rows)


def moment_kernel(coef_m: np.ndarray, momentmap: MomentMap) -> PairKernel:
    """Pair kernel C^i Dpsi(y) from per-particle moment derivatives C of shape (N, a, K)."""

    def kernel(idx: np.ndarray, points: np.ndarray) -> np.ndarray:
        return np.einsum("nak,nkd->nad", coef_m[idx], momentmap.dpsi(points))

    return kernel


def copy_first_moment(momentmap: MomentMap, states: np.ndarray, aux: np.ndarray) -> np.ndarray:
    """v = (1/N) sum_j Dpsi(X^j) aux^j, the K-vector every first-order copy average factors through."""
    return np.einsum("nkd,nd->k", momentmap.dpsi(states), aux) / states.shape[0]


def copy_second_moment(momentmap: MomentMap, states: np.ndarray, aux: np.ndarray) -> np.ndarray:
    """w_k = (1/N) sum_j aux^j . D^2 psi_k(X^j) aux^j."""
    return np.einsum("na,nkab,nb->k", aux, momentmap.d2psi(states), aux) / states.shape[0]


def moment_average_at_copy(coef_m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Contract the trailing moment axis of per-particle derivatives (N, ..., K) with v."""
    return np.tensordot(coef_m, v, axes=([-1], [0]))


def moment_average_at_coefficient(
    coef_m: np.ndarray,
    dual: np.ndarray,
    momentmap: MomentMap,
    states: np.ndarray,
) -> np.ndarray:
    """(1/N) sum_j <C^j Dpsi(X^i), dual^j>; C is (N, *S, K), dual (N, *S); result (N, d)."""
    n = coef_m.shape[0]
    flat_c = coef_m.reshape(n, -1, coef_m.shape[-1])
    flat_dual = dual.reshape(n, -1)
    w = np.einsum("nsk,ns->k", flat_c, flat_dual) / n
    return np.einsum("k,nkd->nd", w, momentmap.dpsi(states))


def double_copy_average(coef_mm: np.ndarray, v: np.ndarray, v2: np.ndarray | None = None) -> np.ndarray:
    """Two independent copies: contract (N, ..., K, K) with v on the first and v2 on the second axis."""
    v2 = v if v2 is None else v2
    return np.einsum("...kl,k,l->...", coef_mm, v, v2)
