"""Structured logging for laboratory runs (JSON lines or text).

Every record can carry lab fields passed through ``extra`` (check name,
eps, Picard iteration, ...), plus the run context installed by
``configure_logging`` so log lines can be matched to report.json.
"""

from __future__ import annotations

import json
import logging
import sys
from datetime import datetime, timezone
from typing import Any

from .config import LoggingConfig
from .output import jsonable

LAB_FIELDS = (
    "check", "problem", "eps", "step", "iteration", "rho",
    "elapsed_seconds", "particles", "verdict",
)
CONTEXT_FIELDS = ("config_hash", "seed")


def _lab_fields(record: logging.LogRecord) -> dict[str, Any]:
    fields = {}
    for key in LAB_FIELDS + CONTEXT_FIELDS:
        value = getattr(record, key, None)
        if value is not None:
            fields[key] = jsonable(value)
    return fields


class RunContextFilter(logging.Filter):
    """Stamps config_hash and seed on every record passing the handler."""

    def __init__(self, config_hash: str | None = None, seed: int | None = None):
        super().__init__()
        self.config_hash = config_hash
        self.seed = seed

    def filter(self, record: logging.LogRecord) -> bool:
        if self.config_hash is not None:
            record.config_hash = self.config_hash
        if self.seed is not None:
            record.seed = self.seed
        return True


class JSONFormatter(logging.Formatter):
    """One JSON object per line; numpy scalars and arrays are unwrapped."""

    def format(self, record: logging.LogRecord) -> str:
        payload: dict[str, Any] = {
            "timestamp": datetime.fromtimestamp(record.created, tz=timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
            **_lab_fields(record),
        }
        if record.exc_info and record.exc_info[1]:
            payload["exception"] = self.formatException(record.exc_info)
        return json.dumps(payload, default=str)


class TextFormatter(logging.Formatter):
    """Human-readable lines; lab fields follow the message as key=value pairs."""

    def __init__(self) -> None:
        super().__init__(
            fmt="%(asctime)s %(levelname)-8s [%(name)s] %(message)s",
            datefmt="%Y-%m-%d %H:%M:%S",
        )

    def format(self, record: logging.LogRecord) -> str:
        line = super().format(record)
        fields = {k: v for k, v in _lab_fields(record).items() if k not in CONTEXT_FIELDS}
        if not fields:
            return line
        head, sep, tail = line.partition("\n")
        suffix = " ".join(f"{k}={v}" for k, v in fields.items())
        return f"{head} ({suffix}){sep}{tail}"


def configure_logging(
    config: LoggingConfig,
    config_hash: str | None = None,
    seed: int | None = None,
) -> None:
    """Install one stderr handler on the root logger, replacing any previous ones."""
    root = logging.getLogger()
    root.setLevel(getattr(logging, config.level.upper(), logging.INFO))

    for handler in root.handlers[:]:
        root.removeHandler(handler)

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JSONFormatter() if config.format == "json" else TextFormatter())
    handler.addFilter(RunContextFilter(config_hash, seed))
    root.addHandler(handler)

    for noisy in ("matplotlib", "numba"):
        logging.getLogger(noisy).setLevel(logging.WARNING)
