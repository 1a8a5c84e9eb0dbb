import json

import pytest

from tomocert.backend import preference
from tomocert.backend.preference import (
    CorruptedPreferenceFileError,
    Preference,
    WitnessChoice,
    load_preference,
)


class TestPreference:
    """Tests for Preference and its file."""

    def test_defaults(self):
        defaults = Preference()
        assert defaults.alpha == 1e-3
        assert defaults.witness is WitnessChoice.BOTH
        assert defaults.bootstrap_samples == 1000
        assert not defaults.literal_median
        assert defaults.seed == 0
        assert not defaults.drop_odd_shot
        assert not defaults.emit_samples

    def test_witness_names(self):
        updated = Preference().updated({"witness": "wl", "seed": 9})
        assert updated.witness is WitnessChoice.KERNEL
        assert updated.seed == 9

    @pytest.mark.parametrize(
        "changes",
        [{"alpha": 0.0}, {"alpha": 1.0}, {"bootstrap_samples": 0}],
    )
    def test_rejects_values(self, changes):
        with pytest.raises(ValueError):
            Preference(**changes)

    def test_round_trip(self, tmp_path):
        path = tmp_path / "preference.json"
        saved = Preference(alpha=0.01, witness=WitnessChoice.KERNEL)
        saved.save(str(path))

        loaded = Preference.load_from_file(str(path))
        assert loaded == saved

    def test_partial_file(self, tmp_path):
        path = tmp_path / "preference.json"
        path.write_text(json.dumps({"bootstrap_samples": 250}))

        loaded = Preference.load_from_file(str(path))
        assert loaded.bootstrap_samples == 250
        assert loaded.alpha == 1e-3

    def test_nested_solver(self):
        updated = Preference().updated({"solver": {"tolerance": 1e-6}})
        assert updated.solver.tolerance == 1e-6
        assert updated.solver.max_iterations == 50000

    @pytest.mark.parametrize(
        "document",
        [
            {"colour": "red"},
            {"witness": "entanglement"},
            {"solver": {"speed": 2}},
            {"alpha": 2.0},
        ],
    )
    def test_corrupted_documents(self, document):
        with pytest.raises(CorruptedPreferenceFileError):
            Preference().updated(document)

    def test_not_json(self, tmp_path):
        path = tmp_path / "preference.json"
        path.write_bytes(b"\xff\xfe")
        with pytest.raises(CorruptedPreferenceFileError):
            Preference.load_from_file(str(path))


class TestLoadPreference:
    def test_missing_user_file(self, tmp_path, monkeypatch):
        monkeypatch.setattr(
            preference,
            "user_preference_path",
            lambda: str(tmp_path / "absent.json"),
        )
        assert load_preference() == Preference()

    def test_corrupted_user_file_is_ignored(
        self, tmp_path, monkeypatch, caplog
    ):
        path = tmp_path / "preference.json"
        path.write_text("[1, 2")
        monkeypatch.setattr(
            preference, "user_preference_path", lambda: str(path)
        )

        assert load_preference() == Preference()
        assert "ignoring corrupted preference" in caplog.text

    def test_explicit_file_must_load(self, tmp_path):
        path = tmp_path / "preference.json"
        path.write_text("[1, 2")
        with pytest.raises(CorruptedPreferenceFileError):
            load_preference(str(path))
