"""Tests for check records and the verification report."""

import json

from mv_maxprinciple.output import SCHEMA_VERSION
from mv_maxprinciple.verify.report import CheckRecord, VerificationReport, within


class TestWithin:
    def test_uses_absolute_value(self):
        assert within("a", -0.5, 0.5).passed
        assert not within("a", -0.51, 0.5).passed

    def test_details_kept(self):
        record = within("a", 1.0, 2.0, slope=1.0)
        assert record.to_dict() == {
            "name": "a", "statistic": 1.0, "tolerance": 2.0, "verdict": "pass", "details": {"slope": 1.0},
        }


class TestVerificationReport:
    def test_failing_names(self):
        report = VerificationReport(config_hash="h", seeds={"simulation": 1})
        report.add(within("ok", 0.0, 1.0))
        report.add(CheckRecord("bad", 2.0, 1.0, False))
        assert report.failing == ["bad"]
        assert not report.passed

    def test_empty_report_passes(self):
        assert VerificationReport(config_hash="h", seeds={}).passed

    def test_write(self, tmp_path):
        report = VerificationReport(config_hash="h", seeds={"simulation": 7}, header={"runtimes": {"simulate": 0.1}})
        report.add(within("x", 0.1, 1.0))
        payload = json.loads(report.write(tmp_path).read_text())
        assert payload["schema_version"] == SCHEMA_VERSION
        assert payload["passed"] is True
        assert payload["seeds"] == {"simulation": 7}
        assert payload["records"][0]["verdict"] == "pass"
        assert payload["header"]["runtimes"] == {"simulate": 0.1}
