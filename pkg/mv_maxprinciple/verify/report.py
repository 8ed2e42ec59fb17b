"""Verification report: named check records with verdicts, written as report.json."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..output import SCHEMA_VERSION, write_json

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CheckRecord:
    name: str
    statistic: float
    tolerance: float
    passed: bool
    details: dict[str, Any] = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "statistic": self.statistic,
            "tolerance": self.tolerance,
            "verdict": self.verdict,
            "details": self.details,
        }


def within(name: str, statistic: float, tolerance: float, **details: Any) -> CheckRecord:
    """Record that passes iff |statistic| <= tolerance."""
    return CheckRecord(name, float(statistic), float(tolerance), abs(statistic) <= tolerance, details)


@dataclass
class VerificationReport:
    """All check records of one run.

    Timestamps and runtimes live only in ``header``, so two runs with the
    same configuration and seed differ in that field alone.
    """

    config_hash: str
    seeds: dict[str, int]
    records: list[CheckRecord] = field(default_factory=list)
    header: dict[str, Any] = field(default_factory=dict)

    def add(self, record: CheckRecord) -> CheckRecord:
        self.records.append(record)
        logger.info(
            "Check %s: %s (statistic %.4g, tolerance %.4g)",
            record.name, record.verdict, record.statistic, record.tolerance,
            extra={"check": record.name, "verdict": record.verdict},
        )
        return record

    @property
    def failing(self) -> list[str]:
        return [r.name for r in self.records if not r.passed]

    @property
    def passed(self) -> bool:
        return not self.failing

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "config_hash": self.config_hash,
            "seeds": self.seeds,
            "header": self.header,
            "passed": self.passed,
            "records": [r.to_dict() for r in self.records],
        }

    def write(self, directory: str | Path) -> Path:
        return write_json(Path(directory) / "report.json", self.to_dict())
