"""Certification reports: records, verdict, JSON and the summary table."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Final, Optional

from tomocert.backend import TomocertError
from tomocert.backend.bootstrap import bootstrap_pvalue
from tomocert.backend.lrt import wilks_pvalue
from tomocert.backend.witness import hoeffding_bound

REPORT_FORMAT: Final[str] = "tomocert-report/1"
TEST_NAMES: Final[tuple[str, ...]] = ("wp", "wl", "lrt", "lrt_bootstrap")

SIGNIFICANT: Final[str] = "systematic error significant"
NOT_SIGNIFICANT: Final[str] = "no significant systematic error"


class ReportFileError(TomocertError):
    """The report file is malformed or inconsistent"""

    pass


@dataclass(frozen=True)
class TestRecord:
    """The outcome of one test with everything needed to recompute it."""

    __test__ = False

    test: str
    statistic: float
    p_value_bound: float
    parameters: dict[str, Any] = field(default_factory=dict)
    provenance: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "test": self.test,
            "statistic": self.statistic,
            "p_value_bound": self.p_value_bound,
            "parameters": self.parameters,
            "provenance": self.provenance,
        }

    @staticmethod
    def from_dict(document: Any) -> TestRecord:
        try:
            record = TestRecord(
                str(document["test"]),
                float(document["statistic"]),
                float(document["p_value_bound"]),
                dict(document["parameters"]),
                dict(document["provenance"]),
            )
        except (KeyError, TypeError, ValueError) as error:
            raise ReportFileError(f"malformed record: {error}") from error

        if record.test not in TEST_NAMES:
            raise ReportFileError(f"unknown test {record.test!r}")
        return record


def recomputed_p_value(record: TestRecord) -> float:
    """Recomputes the p-value of a record from its statistic and
    parameters.
    """
    parameters = record.parameters
    match record.test:
        case "wp" | "wl":
            if record.statistic >= 0.0:
                return 1.0
            return hoeffding_bound(
                -record.statistic,
                float(parameters["hoeffding_constant"]),
                int(parameters["shots"]),
            )
        case "lrt":
            return wilks_pvalue(record.statistic, int(parameters["delta"]))
        case "lrt_bootstrap":
            return bootstrap_pvalue(
                record.statistic, float(parameters["delta_prime"])
            )

    raise ReportFileError(f"unknown test {record.test!r}")


@dataclass(frozen=True)
class Report:
    alpha: float
    records: tuple[TestRecord, ...]
    provenance: dict[str, Any] = field(default_factory=dict)

    @property
    def significant(self) -> bool:
        return any(
            record.p_value_bound <= self.alpha for record in self.records
        )

    @property
    def verdict(self) -> str:
        return SIGNIFICANT if self.significant else NOT_SIGNIFICANT

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": REPORT_FORMAT,
            "alpha": self.alpha,
            "verdict": self.verdict,
            "records": [record.to_dict() for record in self.records],
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        """Renders the records as a fixed-width table."""
        lines = [f"{'test':<16}{'statistic':>16}{'p-value bound':>18}"]
        for record in self.records:
            lines.append(
                f"{record.test:<16}{record.statistic:>16.6g}"
                f"{record.p_value_bound:>18.4e}"
            )
        lines.append(f"verdict at alpha = {self.alpha:g}: {self.verdict}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_dict(document: Any) -> Report:
        if not isinstance(document, dict):
            raise ReportFileError("report must be a JSON object")
        if document.get("format") != REPORT_FORMAT:
            raise ReportFileError(
                f"unsupported report format {document.get('format')!r}"
            )

        try:
            alpha = float(document["alpha"])
            records = tuple(
                TestRecord.from_dict(entry) for entry in document["records"]
            )
            provenance = dict(document.get("provenance", {}))
        except (KeyError, TypeError, ValueError) as error:
            raise ReportFileError(f"malformed report: {error}") from error

        return Report(alpha, records, provenance)

    @staticmethod
    def load_from_file(path: str) -> Report:
        with open(path, "rb") as report_file:
            try:
                document = json.loads(report_file.read().decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as error:
                raise ReportFileError(f"{path}: {error}") from error

        return Report.from_dict(document)


def merge_reports(
    reports: list[Report], alpha: Optional[float] = None
) -> Report:
    """Concatenates the records of several reports.

    Every record's p-value is recomputed before merging.

    Raises:
        ReportFileError: A stored p-value does not match its statistic.
    """
    if not reports:
        raise ReportFileError("nothing to merge")

    records = []
    for report in reports:
        for record in report.records:
            expected = recomputed_p_value(record)
            if not math.isclose(
                expected, record.p_value_bound, rel_tol=1e-9, abs_tol=1e-15
            ):
                raise ReportFileError(
                    f"{record.test} record stores p = "
                    f"{record.p_value_bound:.6g} but its statistic gives "
                    f"{expected:.6g}"
                )
            records.append(record)

    return Report(
        reports[0].alpha if alpha is None else alpha,
        tuple(records),
        {"merged_from": [report.provenance for report in reports]},
    )
