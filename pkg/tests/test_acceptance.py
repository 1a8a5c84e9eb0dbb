"""
Long Monte Carlo runs checking calibration and detection power.

Run with ``pytest -m slow``.
"""

import csv
import io
import json

import numpy as np
import pytest
from scipy import stats

from tomocert.application import EXIT_SIGNIFICANT, auxiliary, main
from tomocert.application.certify import emit_survival
from tomocert.application.message import Survival
from tomocert.backend import preference
from tomocert.backend.lrt import likelihood_ratio_test
from tomocert.backend.observer import ReplicateRunner
from tomocert.backend.preference import Preference
from tomocert.backend.simulate import (
    Crosstalk,
    Depolarizing,
    NoError,
    StateName,
    StateSpec,
    simulate_counts,
)

pytestmark = pytest.mark.slow

RUNS = 50


def _lrt_p_values(model, err, shots, seeds):
    state = StateSpec(StateName.GHZ, model.num_qubits)
    return np.array(
        [
            likelihood_ratio_test(
                simulate_counts(model, state, err, shots, seed), model
            ).p_value
            for seed in seeds
        ]
    )


class TestWilksCalibration:
    def test_bell_survival_function(self):
        """411 error-free Bell experiments follow Q(6, t/2)."""
        command = Survival(
            "bell_psi_minus", 2, 150, "none", 2013, 411, model=None
        )
        sink = io.StringIO()
        rows = emit_survival(command, Preference(), ReplicateRunner(), sink)

        gap = max(abs(empirical - wilks) for _, empirical, wilks in rows)
        assert gap <= 0.07

        sink.seek(0)
        assert len(list(csv.reader(sink))) == len(rows) + 1


class TestDetectionPower:
    """Crosstalk is detected, its absence is not."""

    def test_crosstalk_detected(self, three_qubits):
        p_values = _lrt_p_values(
            three_qubits, Crosstalk(0.2), 750, range(RUNS)
        )
        assert np.count_nonzero(p_values < 1e-3) >= 45

    def test_no_crosstalk_not_detected(self, three_qubits):
        p_values = _lrt_p_values(
            three_qubits, Crosstalk(0.0), 750, range(RUNS, 2 * RUNS)
        )
        assert np.count_nonzero(p_values < 1e-3) <= 3

    def test_depolarizing_is_undetectable(self, three_qubits):
        p_values = _lrt_p_values(
            three_qubits, Depolarizing(0.3), 750, range(RUNS)
        )
        assert stats.kstest(p_values, "uniform").pvalue >= 0.01

    def test_ideal_model_never_flags_no_error(self, two_qubits):
        p_values = _lrt_p_values(two_qubits, NoError(), 500, range(RUNS))
        assert np.count_nonzero(p_values < 1e-3) <= 3


class TestEndToEnd:
    def test_crosstalk_report(self, tmp_path, monkeypatch):
        monkeypatch.setattr(
            preference,
            "user_preference_path",
            lambda: str(tmp_path / "absent.json"),
        )
        monkeypatch.setattr(
            auxiliary, "configure_logging", lambda verbose, quiet: None
        )
        counts = tmp_path / "counts.json"
        model = tmp_path / "model.json"
        witness = tmp_path / "witness.json"
        lrt = tmp_path / "lrt.json"
        merged = tmp_path / "merged.json"

        main(["model", "build", "--qubits", "3", "--out", str(model)])
        main(
            [
                "simulate",
                "--state",
                "ghz",
                "--qubits",
                "3",
                "--shots",
                "750",
                "--error",
                "crosstalk:0.2",
                "--seed",
                "42",
                "--out",
                str(counts),
            ]
        )
        common = ["--counts", str(counts), "--model", str(model)]
        main(
            [
                "certify",
                "witness",
                *common,
                "--type",
                "wp",
                "--out",
                str(witness),
            ]
        )
        code = main(["certify", "lrt", *common, "--out", str(lrt)])
        assert code == EXIT_SIGNIFICANT

        main(["report", "merge", str(witness), str(lrt), "--out", str(merged)])
        records = json.loads(merged.read_text())["records"]
        assert [record["test"] for record in records] == ["wp", "lrt"]
        assert records[1]["p_value_bound"] < 1e-3
