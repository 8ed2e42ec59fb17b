"""Worker-capped, order-preserving map over independent jobs."""

from __future__ import annotations

import concurrent.futures
import logging
from collections.abc import Callable, Sequence
from typing import TypeVar

from .exceptions import ArgumentError

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def chunk_bounds(total: int, workers: int) -> list[tuple[int, int]]:
    """Split range(total) into at most `workers` contiguous chunks."""
    if workers < 1:
        raise ArgumentError(f"workers must be >= 1, got {workers}")
    chunks = min(workers, max(total, 1))
    edges = [total * i // chunks for i in range(chunks + 1)]
    return [(lo, hi) for lo, hi in zip(edges, edges[1:]) if hi > lo]


def ordered_map(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> list[R]:
    """Apply fn to every item; results come back in input order whatever the worker count."""
    if workers < 1:
        raise ArgumentError(f"workers must be >= 1, got {workers}")
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]

    results: dict[int, R] = {}
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(fn, item): idx for idx, item in enumerate(items)}
        for future in concurrent.futures.as_completed(futures):
            results[futures[future]] = future.result()
    logger.debug("Ran %d jobs on %d workers", len(items), workers)
    return [results[idx] for idx in range(len(items))]
