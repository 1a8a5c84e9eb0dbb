"""
Tests for count data handling.
"""

import io
import json

import numpy as np
import pytest

from tomocert.backend.data import (
    CountData,
    CountDataError,
    CountFileError,
    OddShotCountError,
    check_compatible,
    drop_one_shot,
    frequencies,
    load_counts,
    save_counts,
    split_half,
)
from tomocert.backend.rng import InvalidSeedError


def _counts(rows, labels=None, shots=None):
    rows = np.asarray(rows)
    if labels is None:
        labels = tuple(f"s{index}" for index in range(len(rows)))
    if shots is None:
        shots = int(rows[0].sum())
    return CountData(shots, rows, labels)


class TestCountData:
    """Tests for the CountData invariants."""

    def test_valid(self):
        data = _counts([[3, 1], [2, 2], [0, 4]], ("X", "Y", "Z"))
        assert data.shape == (3, 2)
        assert data.counts.dtype == np.int64

    def test_wrong_row_sum_names_setting(self):
        with pytest.raises(CountDataError) as error:
            _counts([[3, 1], [2, 1]], ("X", "Y"), shots=4)
        assert error.value.setting == 1
        assert "Y" in str(error.value)

    def test_negative_count(self):
        with pytest.raises(CountDataError) as error:
            _counts([[5, -1], [2, 2]], shots=4)
        assert error.value.setting == 0

    def test_fractional_count(self):
        with pytest.raises(CountDataError):
            _counts([[2.5, 1.5]], shots=4)

    def test_label_count(self):
        with pytest.raises(CountDataError):
            CountData(4, np.array([[2, 2]]), ("X", "Y"))

    def test_shot_records_must_match(self):
        with pytest.raises(CountDataError):
            CountData(
                3,
                np.array([[2, 1]]),
                ("X",),
                shot_records=(np.array([0, 1, 1]),),
            )


class TestFrequencies:
    def test_frequencies(self):
        table = frequencies(_counts([[3, 1], [0, 4]]))
        assert np.allclose(table.freqs, [[0.75, 0.25], [0.0, 1.0]])
        assert table.flat.shape == (4,)


class TestCheckCompatible:
    def test_label_mismatch(self, one_qubit):
        data = _counts([[2, 2]] * 3, ("X", "Z", "Y"))
        with pytest.raises(CountDataError) as error:
            check_compatible(data, one_qubit)
        assert error.value.setting == 1

    def test_shape_mismatch(self, one_qubit):
        with pytest.raises(CountDataError):
            check_compatible(_counts([[2, 2]] * 2), one_qubit)

    def test_compatible(self, one_qubit):
        check_compatible(_counts([[2, 2]] * 3, ("X", "Y", "Z")), one_qubit)


class TestSplitHalf:
    """Tests for split_half."""

    def test_halves_add_up(self):
        data = _counts([[37, 13, 25, 25], [0, 100, 0, 0], [50, 0, 0, 50]])
        first, second = split_half(data, 99)

        assert first.shots_per_setting == 50
        assert second.shots_per_setting == 50
        assert np.array_equal(first.counts + second.counts, data.counts)
        assert first.metadata["half"] == 1
        assert second.metadata["split_seed"] == 99

    def test_deterministic(self):
        data = _counts([[37, 13, 25, 25], [10, 40, 30, 20]])
        first, _ = split_half(data, 7)
        again, _ = split_half(data, 7)
        assert np.array_equal(first.counts, again.counts)

    def test_single_shot_halves(self):
        data = _counts([[1, 1]])
        seen = set()
        for seed in range(64):
            first, second = split_half(data, seed)
            assert first.counts.tolist() in ([[1, 0]], [[0, 1]])
            assert (first.counts + second.counts).tolist() == [[1, 1]]
            assert split_half(data, seed)[0].counts.tolist() == (
                first.counts.tolist()
            )
            seen.add(tuple(first.counts[0]))
        assert seen == {(1, 0), (0, 1)}

    def test_odd_shots(self):
        data = _counts([[3, 2]])
        with pytest.raises(OddShotCountError):
            split_half(data, 1)

    def test_odd_shots_after_drop(self):
        data = drop_one_shot(_counts([[3, 2], [1, 4]]), 5)
        assert data.shots_per_setting == 4
        first, second = split_half(data, 1)
        assert first.shots_per_setting == 2

    def test_shot_records_split_by_time(self):
        record = np.array([0, 0, 0, 1, 1, 1])
        data = CountData(
            6, np.array([[3, 3]]), ("Z",), shot_records=(record,)
        )
        first, second = split_half(data, 3)
        assert first.counts.tolist() == [[3, 0]]
        assert second.counts.tolist() == [[0, 3]]

    def test_invalid_seed(self):
        with pytest.raises(InvalidSeedError):
            split_half(_counts([[2, 2]]), -1)


class TestCountFile:
    """Tests for save_counts and load_counts."""

    def test_round_trip(self):
        data = CountData(
            4,
            np.array([[3, 1], [2, 2]]),
            ("X", "Y"),
            1,
            {"seed": 3},
        )
        sink = io.BytesIO()
        save_counts(data, sink)
        loaded = load_counts(io.BytesIO(sink.getvalue()))

        assert loaded.setting_labels == ("X", "Y")
        assert np.array_equal(loaded.counts, data.counts)
        assert loaded.metadata == {"seed": 3}

    def test_not_json(self):
        with pytest.raises(CountFileError):
            load_counts(io.BytesIO(b"counts"))

    def test_ragged_rows(self):
        document = {
            "format": "tomocert-counts/1",
            "qubits": 1,
            "shots_per_setting": 4,
            "settings": [
                {"basis": "X", "counts": [2, 2]},
                {"basis": "Y", "counts": [4]},
            ],
        }
        with pytest.raises(CountDataError) as error:
            load_counts(io.BytesIO(json.dumps(document).encode()))
        assert error.value.label == "Y"

    def test_non_numeric(self):
        document = {
            "format": "tomocert-counts/1",
            "qubits": 1,
            "shots_per_setting": 4,
            "settings": [{"basis": "X", "counts": ["2", 2]}],
        }
        with pytest.raises(CountDataError):
            load_counts(io.BytesIO(json.dumps(document).encode()))
