"""Per-particle Philox substreams split from one master seed."""

from __future__ import annotations

import numpy as np

from ..parallel import chunk_bounds, ordered_map


def particle_generator(seed: int, namespace: int, index: int) -> np.random.Generator:
    """Counter-based stream for particle `index` of ensemble `namespace`.

    The stream depends only on (seed, namespace, index), so parallel
    generation cannot reorder randomness.
    """
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(namespace, index))
    return np.random.Generator(np.random.Philox(sequence))


def brownian_increments(
    seed: int,
    namespace: int,
    particles: int,
    steps: int,
    dim: int,
    dt: float,
    workers: int = 1,
) -> np.ndarray:
    """Brownian increments of shape (particles, steps, dim), each Normal(0, dt)."""
    scale = np.sqrt(dt)

    def fill(bounds: tuple[int, int]) -> np.ndarray:
        lo, hi = bounds
        block = np.empty((hi - lo, steps, dim))
        for offset, i in enumerate(range(lo, hi)):
            block[offset] = particle_generator(seed, namespace, i).standard_normal((steps, dim))
        return block

    blocks = ordered_map(fill, chunk_bounds(particles, workers), workers)
    return np.concatenate(blocks, axis=0) * scale


def derived_generator(seed: int, *key: int) -> np.random.Generator:
    """Auxiliary stream (subsampling, random test points) disjoint from particle streams."""
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(1_000_003, *key))
    return np.random.Generator(np.random.Philox(sequence))
