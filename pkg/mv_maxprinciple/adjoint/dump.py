"""Flat CSV export of adjoint snapshots; pair indices are flattened row-major as i * J + j."""

from __future__ import annotations

import itertools
import logging
from pathlib import Path

import numpy as np

from ..output import SCHEMA_VERSION, write_csv
from .first import FirstOrderAdjoint
from .second import SecondOrderAdjoint
from .third import ProductAdjoint

logger = logging.getLogger(__name__)

COLUMNS = ["process", "index", "step", "time", "component", "value"]


def _entries(name: str, values: np.ndarray, knots: np.ndarray):
    """values has shape (n, steps, *component); components are joined with '.'."""
    n, steps = values.shape[:2]
    comp_shape = values.shape[2:]
    for i in range(n):
        for k in range(steps):
            for comp in itertools.product(*(range(s) for s in comp_shape)):
                label = ".".join(str(c + 1) for c in comp)
                yield [name, i, k, knots[k], label, values[(i, k) + comp]]


def write_adjoints(
    directory: str | Path,
    config_hash: str,
    first: FirstOrderAdjoint,
    second: SecondOrderAdjoint | None = None,
    third: ProductAdjoint | None = None,
) -> Path:
    knots = first.grid.knots

    def rows():
        yield from _entries("p", first.p, knots)
        yield from _entries("q", first.q, knots)
        if second is not None:
            yield from _entries("P", second.P, knots)
            yield from _entries("Q", second.Q, knots)
        if third is not None:
            n1, J = third.pairs
            for name, arr in (("PP", third.P), ("QQ1", third.Q1), ("QQ2", third.Q2)):
                yield from _entries(name, arr.reshape((n1 * J,) + arr.shape[2:]), knots)

    header = {"config_hash": config_hash, "schema_version": SCHEMA_VERSION}
    path = write_csv(Path(directory) / "adjoints.csv", COLUMNS, rows(), header)
    logger.info("Wrote %s", path)
    return path
