"""
Tests driving the command line end to end.
"""

import csv
import json
import logging

import pytest

from tomocert.application import (
    EXIT_CLEAN,
    EXIT_FAILURE,
    EXIT_SIGNIFICANT,
    auxiliary,
    main,
)
from tomocert.backend import preference
from tomocert.backend.data import load_counts_file
from tomocert.backend.measmodel import load_model_file

# kept before the autouse fixture replaces it
CONFIGURE_LOGGING = auxiliary.configure_logging


@pytest.fixture(autouse=True)
def isolated(tmp_path, monkeypatch):
    """Keeps the user's preference file and the root logger out of tests."""
    monkeypatch.setattr(
        preference,
        "user_preference_path",
        lambda: str(tmp_path / "no-preference.json"),
    )
    monkeypatch.setattr(
        auxiliary, "configure_logging", lambda verbose, quiet: None
    )


def _simulate(directory, name, state="maximally_mixed", error="none"):
    out = directory / f"{name}.json"
    code = main(
        [
            "--quiet",
            "simulate",
            "--state",
            state,
            "--qubits",
            "2",
            "--shots",
            "200",
            "--error",
            error,
            "--seed",
            "1",
            "--out",
            str(out),
        ]
    )
    assert code == EXIT_CLEAN
    return out


def _model(directory):
    out = directory / "model.json"
    assert (
        main(["--quiet", "model", "build", "--qubits", "2", "--out", str(out)])
        == EXIT_CLEAN
    )
    return out


def _certify(test, counts, model, out, *extra):
    return main(
        [
            "--quiet",
            "certify",
            test,
            "--counts",
            str(counts),
            "--model",
            str(model),
            "--seed",
            "7",
            "--out",
            str(out),
            *extra,
        ]
    )


class TestModelAndSimulate:
    def test_model_build(self, tmp_path):
        model = load_model_file(str(_model(tmp_path)))
        assert model.scheme == "pauli"
        assert model.shape == (9, 4)

    def test_simulate(self, tmp_path):
        counts = load_counts_file(
            str(_simulate(tmp_path, "counts", "ghz", "crosstalk:0.2"))
        )
        assert counts.shots_per_setting == 200
        assert counts.metadata["error"] == "crosstalk:0.2"

    def test_simulate_needs_out(self):
        code = main(
            [
                "simulate",
                "--state",
                "ghz",
                "--qubits",
                "2",
                "--shots",
                "10",
                "--seed",
                "1",
            ]
        )
        assert code == EXIT_FAILURE

    def test_unknown_state(self, tmp_path):
        code = main(
            [
                "--quiet",
                "simulate",
                "--state",
                "cat",
                "--qubits",
                "2",
                "--shots",
                "10",
                "--seed",
                "1",
                "--out",
                str(tmp_path / "counts.json"),
            ]
        )
        assert code == EXIT_FAILURE


class TestCertify:
    """Tests for the certify command."""

    def test_witness_and_lrt(self, tmp_path, capsys):
        counts = _simulate(tmp_path, "counts")
        model = _model(tmp_path)
        out = tmp_path / "report.json"

        code = _certify("witness", counts, model, out)
        report = json.loads(out.read_text())

        assert code == EXIT_CLEAN
        assert [record["test"] for record in report["records"]] == [
            "wp",
            "wl",
        ]
        assert report["provenance"]["counts_digest"].startswith("sha256:")
        assert "verdict at alpha" in capsys.readouterr().out

        assert _certify("lrt", counts, model, out) == EXIT_CLEAN
        record = json.loads(out.read_text())["records"][0]
        assert record["parameters"]["delta"] == 12

    def test_reproducible(self, tmp_path):
        counts = _simulate(tmp_path, "counts")
        model = _model(tmp_path)

        _certify("witness", counts, model, tmp_path / "first.json")
        _certify("witness", counts, model, tmp_path / "second.json")
        assert (tmp_path / "first.json").read_bytes() == (
            tmp_path / "second.json"
        ).read_bytes()

    def test_exit_code_follows_verdict(self, tmp_path):
        counts = _simulate(tmp_path, "counts", "ghz", "crosstalk:0.5")
        model = _model(tmp_path)
        out = tmp_path / "report.json"

        code = _certify("lrt", counts, model, out, "--alpha", "0.5")
        significant = json.loads(out.read_text())["verdict"]
        expected = (
            EXIT_SIGNIFICANT
            if significant == "systematic error significant"
            else EXIT_CLEAN
        )
        assert code == expected

    def test_malformed_counts(self, tmp_path):
        counts = tmp_path / "counts.json"
        counts.write_text("{ not json")
        model = _model(tmp_path)

        code = _certify("witness", counts, model, tmp_path / "report.json")
        assert code == EXIT_FAILURE

    def test_incompatible_model(self, tmp_path):
        counts = _simulate(tmp_path, "counts")
        model = tmp_path / "one.json"
        main(
            ["--quiet", "model", "build", "--qubits", "1", "--out", str(model)]
        )

        code = _certify("lrt", counts, model, tmp_path / "report.json")
        assert code == EXIT_FAILURE

    def test_supplied_witness_guards_overfitting(self, tmp_path):
        counts = _simulate(tmp_path, "counts")
        other = _simulate(tmp_path, "other", "ghz")
        model = _model(tmp_path)
        prefix = tmp_path / "saved"
        out = tmp_path / "report.json"

        _certify("witness", counts, model, out, "--save-witness", str(prefix))
        witness = tmp_path / "saved.wp.json"
        assert witness.exists()
        assert (tmp_path / "saved.wl.json").exists()

        assert (
            _certify("witness", counts, model, out, "--witness", str(witness))
            == EXIT_FAILURE
        )

        code = _certify(
            "witness",
            counts,
            model,
            out,
            "--witness",
            str(witness),
            "--i-understand-overfitting",
        )
        assert code in (EXIT_CLEAN, EXIT_SIGNIFICANT)

        _certify("witness", other, model, out, "--witness", str(witness))
        records = json.loads(out.read_text())["records"]
        assert [record["test"] for record in records] == ["wp"]
        assert records[0]["parameters"]["shots"] == 200

    def test_negated_witness_is_rejected(self, tmp_path, caplog):
        counts = _simulate(tmp_path, "counts")
        other = _simulate(tmp_path, "other", "ghz")
        model = _model(tmp_path)
        prefix = tmp_path / "saved"
        out = tmp_path / "report.json"
        _certify("witness", other, model, out, "--save-witness", str(prefix))

        witness = tmp_path / "saved.wp.json"
        document = json.loads(witness.read_text())
        document["coeffs"] = [
            [-value for value in row] for row in document["coeffs"]
        ]
        witness.write_text(json.dumps(document))

        code = _certify(
            "witness", counts, model, out, "--witness", str(witness)
        )
        assert code == EXIT_FAILURE
        assert "witness operator has eigenvalue" in caplog.text

    def test_type_selects_witness(self, tmp_path):
        counts = _simulate(tmp_path, "counts")
        model = _model(tmp_path)
        out = tmp_path / "report.json"

        assert _certify("witness", counts, model, out, "--type", "wl") == (
            EXIT_CLEAN
        )
        records = json.loads(out.read_text())["records"]
        assert [record["test"] for record in records] == ["wl"]

        code = _certify("witness", counts, model, out, "--type", "kernel")
        assert code == EXIT_FAILURE

    def test_odd_shots(self, tmp_path):
        counts = tmp_path / "odd.json"
        main(
            [
                "--quiet",
                "simulate",
                "--state",
                "ghz",
                "--qubits",
                "2",
                "--shots",
                "151",
                "--seed",
                "3",
                "--out",
                str(counts),
            ]
        )
        model = _model(tmp_path)
        out = tmp_path / "report.json"

        assert _certify("witness", counts, model, out) == EXIT_FAILURE
        code = _certify("witness", counts, model, out, "--drop-odd-shot")
        assert code in (EXIT_CLEAN, EXIT_SIGNIFICANT)
        record = json.loads(out.read_text())["records"][0]
        assert record["parameters"]["shots"] == 75

    def test_bootstrap(self, tmp_path):
        counts = _simulate(tmp_path, "counts")
        model = _model(tmp_path)
        out = tmp_path / "report.json"

        code = _certify(
            "bootstrap",
            counts,
            model,
            out,
            "--samples",
            "100",
            "--emit-samples",
        )
        record = json.loads(out.read_text())["records"][0]

        assert code in (EXIT_CLEAN, EXIT_SIGNIFICANT)
        assert record["test"] == "lrt_bootstrap"
        assert len(record["parameters"]["samples"]) == 100
        assert record["parameters"]["delta_prime"] > 0.0


class TestSurvival:
    def test_single_replicate(self, tmp_path):
        out = tmp_path / "survival.csv"
        code = main(
            [
                "--quiet",
                "survival",
                "--state",
                "bell_psi_minus",
                "--qubits",
                "2",
                "--shots",
                "150",
                "--seed",
                "4",
                "--replicates",
                "1",
                "--points",
                "20",
                "--out",
                str(out),
            ]
        )
        assert code == EXIT_CLEAN

        with open(out, newline="") as source:
            rows = list(csv.DictReader(source))
        assert len(rows) == 20

        fractions = [
            float(row["empirical_fraction_lambda_ge_t"]) for row in rows
        ]
        assert set(fractions) <= {0.0, 1.0}
        assert fractions == sorted(fractions, reverse=True)
        assert fractions[0] == 1.0 and fractions[-1] == 0.0
        assert float(rows[0]["wilks_Q"]) == 1.0

    def test_rejects_model_without_deficit(self, tmp_path, caplog):
        code = main(
            [
                "survival",
                "--state",
                "maximally_mixed",
                "--qubits",
                "1",
                "--shots",
                "100",
                "--seed",
                "4",
                "--replicates",
                "2",
                "--out",
                str(tmp_path / "survival.csv"),
            ]
        )
        assert code == EXIT_FAILURE
        assert "dimension deficit 0" in caplog.text


class TestReportMerge:
    def test_merge(self, tmp_path):
        counts = _simulate(tmp_path, "counts")
        model = _model(tmp_path)
        _certify("witness", counts, model, tmp_path / "witness.json")
        _certify("lrt", counts, model, tmp_path / "lrt.json")
        merged = tmp_path / "merged.json"

        code = main(
            [
                "--quiet",
                "report",
                "merge",
                str(tmp_path / "witness.json"),
                str(tmp_path / "lrt.json"),
                "--out",
                str(merged),
            ]
        )
        records = json.loads(merged.read_text())["records"]

        assert code == EXIT_CLEAN
        assert [record["test"] for record in records] == ["wp", "wl", "lrt"]

    def test_tampered_report(self, tmp_path):
        counts = _simulate(tmp_path, "counts")
        model = _model(tmp_path)
        report = tmp_path / "lrt.json"
        _certify("lrt", counts, model, report)

        document = json.loads(report.read_text())
        document["records"][0]["p_value_bound"] = 1e-9
        report.write_text(json.dumps(document))

        code = main(["--quiet", "report", "merge", str(report)])
        assert code == EXIT_FAILURE


class TestUsage:
    def test_missing_command(self):
        assert main([]) == EXIT_FAILURE

    def test_help(self, capsys):
        assert main(["--help"]) == EXIT_CLEAN
        assert "certify" in capsys.readouterr().out

    def test_config_file(self, tmp_path):
        config = tmp_path / "preference.json"
        config.write_text(json.dumps({"alpha": 0.5}))
        counts = _simulate(tmp_path, "counts")
        model = _model(tmp_path)
        out = tmp_path / "report.json"

        main(
            [
                "--quiet",
                "--config",
                str(config),
                "certify",
                "lrt",
                "--counts",
                str(counts),
                "--model",
                str(model),
                "--out",
                str(out),
            ]
        )
        assert json.loads(out.read_text())["alpha"] == 0.5

    def test_config_mirrors_certify_flags(self, tmp_path):
        config = tmp_path / "preference.json"
        config.write_text(
            json.dumps(
                {
                    "seed": 11,
                    "drop_odd_shot": True,
                    "emit_samples": True,
                    "bootstrap_samples": 100,
                }
            )
        )
        counts = tmp_path / "odd.json"
        main(
            [
                "--quiet",
                "simulate",
                "--state",
                "maximally_mixed",
                "--qubits",
                "2",
                "--shots",
                "151",
                "--seed",
                "3",
                "--out",
                str(counts),
            ]
        )
        model = _model(tmp_path)
        out = tmp_path / "report.json"

        main(
            [
                "--quiet",
                "--config",
                str(config),
                "certify",
                "bootstrap",
                "--counts",
                str(counts),
                "--model",
                str(model),
                "--out",
                str(out),
            ]
        )
        report = json.loads(out.read_text())
        assert report["provenance"]["seed"] == 11
        assert len(report["records"][0]["parameters"]["samples"]) == 100

        main(
            [
                "--quiet",
                "--config",
                str(config),
                "certify",
                "witness",
                "--counts",
                str(counts),
                "--model",
                str(model),
                "--seed",
                "5",
                "--out",
                str(out),
            ]
        )
        report = json.loads(out.read_text())
        assert report["provenance"]["seed"] == 5
        assert report["records"][0]["parameters"]["shots"] == 75


class TestConfigureLogging:
    def test_levels(self):
        configure = CONFIGURE_LOGGING
        root = logging.getLogger()
        handlers, level = root.handlers[:], root.level
        try:
            configure(True, False)
            assert root.level == logging.DEBUG
            configure(False, True)
            assert root.level == logging.ERROR
            configure(False, False)
            assert root.level == logging.WARNING
        finally:
            root.handlers[:] = handlers
            root.setLevel(level)
