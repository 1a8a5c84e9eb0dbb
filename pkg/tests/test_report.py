"""
Tests for certification reports.
"""

import json
import math

import pytest

from tomocert.application.report import (
    NOT_SIGNIFICANT,
    SIGNIFICANT,
    Report,
    ReportFileError,
    TestRecord,
    merge_reports,
    recomputed_p_value,
)
from tomocert.backend.lrt import wilks_pvalue


def _witness_record(value: float, shots: int = 100) -> TestRecord:
    p_bound = 1.0 if value >= 0 else math.exp(-2 * value**2 * shots)
    return TestRecord(
        "wp",
        value,
        p_bound,
        {"hoeffding_constant": 1.0, "shots": shots, "alpha": 1e-3},
    )


def _lrt_record(statistic: float) -> TestRecord:
    return TestRecord(
        "lrt",
        statistic,
        wilks_pvalue(statistic, 12),
        {"delta": 12, "shots": 150, "alpha": 1e-3},
    )


class TestReport:
    """Tests for Report."""

    def test_verdict(self):
        clean = Report(1e-3, (_witness_record(0.1), _lrt_record(10.0)))
        flagged = Report(1e-3, (_witness_record(-0.2), _lrt_record(10.0)))

        assert clean.verdict == NOT_SIGNIFICANT
        assert flagged.significant
        assert flagged.verdict == SIGNIFICANT

    def test_boundary_is_significant(self):
        record = TestRecord("lrt", 1.0, 1e-3, {"delta": 12})
        assert Report(1e-3, (record,)).significant

    def test_json_is_canonical(self):
        report = Report(1e-3, (_lrt_record(10.0),), {"seed": 1})
        text = report.to_json()

        assert text.endswith("\n")
        assert text == Report.from_dict(json.loads(text)).to_json()
        assert json.loads(text)["format"] == "tomocert-report/1"

    def test_table(self):
        table = Report(1e-3, (_witness_record(-0.2),)).table()
        assert table.splitlines()[1].startswith("wp")
        assert SIGNIFICANT in table

    def test_unknown_test(self):
        document = Report(1e-3, (_lrt_record(1.0),)).to_dict()
        document["records"][0]["test"] = "chi"
        with pytest.raises(ReportFileError):
            Report.from_dict(document)

    def test_wrong_format(self):
        with pytest.raises(ReportFileError):
            Report.from_dict({"format": "other", "alpha": 0.1, "records": []})


class TestRecomputedPValue:
    def test_witness(self):
        record = _witness_record(-0.2)
        assert recomputed_p_value(record) == pytest.approx(math.exp(-8))

    def test_non_negative_witness(self):
        assert recomputed_p_value(_witness_record(0.3)) == 1.0

    def test_bootstrap(self):
        record = TestRecord(
            "lrt_bootstrap",
            2.0 * math.log(2.0),
            0.5,
            {"delta_prime": 2.0},
        )
        assert recomputed_p_value(record) == pytest.approx(0.5)


class TestMergeReports:
    """Tests for merge_reports."""

    def test_concatenates(self):
        first = Report(1e-3, (_witness_record(0.1),), {"seed": 1})
        second = Report(1e-3, (_lrt_record(30.0),), {"seed": 2})

        merged = merge_reports([first, second])
        assert [record.test for record in merged.records] == ["wp", "lrt"]
        assert merged.provenance["merged_from"] == [{"seed": 1}, {"seed": 2}]

    def test_alpha_override(self):
        report = Report(1e-3, (_lrt_record(30.0),))
        merged = merge_reports([report], alpha=0.05)
        assert merged.alpha == 0.05
        assert merged.significant

    def test_tampered_p_value(self):
        record = _lrt_record(30.0)
        tampered = TestRecord(
            record.test, record.statistic, 0.5, record.parameters
        )
        with pytest.raises(ReportFileError):
            merge_reports([Report(1e-3, (tampered,))])

    def test_nothing_to_merge(self):
        with pytest.raises(ReportFileError):
            merge_reports([])
