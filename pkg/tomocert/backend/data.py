"""Count data: validation, persistence, halving and frequencies."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, BinaryIO, Final, Optional

import numpy as np

from tomocert.backend import TomocertError
from tomocert.backend.measmodel import MeasurementModel
from tomocert.backend.rng import check_seed, stream

logger = logging.getLogger(__name__)

COUNTS_FORMAT: Final[str] = "tomocert-counts/1"


@dataclass(eq=False)
class CountDataError(TomocertError):
    """The counts violate the count data invariants"""

    reason: str
    setting: Optional[int] = None
    label: Optional[str] = None

    def __str__(self) -> str:
        if self.setting is None:
            return self.reason

        label = f" ({self.label})" if self.label else ""
        return f"setting {self.setting}{label}: {self.reason}"


class CountFileError(TomocertError):
    """The count file cannot be parsed"""

    pass


@dataclass(eq=False)
class OddShotCountError(TomocertError):
    """The data cannot be split into two equally sized halves"""

    shots_per_setting: int

    def __str__(self) -> str:
        return (
            f"cannot halve {self.shots_per_setting} shots per setting; drop "
            "one shot per setting explicitly (see drop_one_shot) first"
        )


@dataclass(frozen=True, eq=False)
class CountData:
    """Integer counts ``m_k^s`` of ``N_s`` repetitions per setting."""

    shots_per_setting: int
    counts: np.ndarray
    setting_labels: tuple[str, ...]
    num_qubits: int = 0
    metadata: dict[str, Any] = field(default_factory=dict)
    shot_records: Optional[tuple[np.ndarray, ...]] = None
    """Per-setting outcome indices in acquisition order, if recorded"""

    def __post_init__(self) -> None:
        raw = np.asarray(self.counts)

        if raw.ndim != 2:
            raise CountDataError(f"counts must be a table, got {raw.shape}")
        if len(self.setting_labels) != raw.shape[0]:
            raise CountDataError(
                f"{len(self.setting_labels)} labels for {raw.shape[0]} "
                "settings"
            )
        if self.shots_per_setting < 1:
            raise CountDataError(
                f"shots per setting must be positive, got "
                f"{self.shots_per_setting}"
            )

        counts = np.rint(raw).astype(np.int64)
        for setting in range(raw.shape[0]):
            label = self.setting_labels[setting]
            if np.any(raw[setting] != counts[setting]):
                raise CountDataError("counts must be integers", setting, label)
            if np.any(counts[setting] < 0):
                raise CountDataError(
                    f"negative count in {counts[setting].tolist()}",
                    setting,
                    label,
                )
            if counts[setting].sum() != self.shots_per_setting:
                raise CountDataError(
                    f"counts sum to {int(counts[setting].sum())}, expected "
                    f"{self.shots_per_setting}",
                    setting,
                    label,
                )

        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "setting_labels", tuple(self.setting_labels))

        if self.shot_records is not None:
            object.__setattr__(
                self, "shot_records", self.__checked_records(counts)
            )

    def __checked_records(self, counts: np.ndarray) -> tuple[np.ndarray, ...]:
        assert self.shot_records is not None

        if len(self.shot_records) != counts.shape[0]:
            raise CountDataError(
                f"{len(self.shot_records)} shot records for "
                f"{counts.shape[0]} settings"
            )

        records = []
        for setting, record in enumerate(self.shot_records):
            label = self.setting_labels[setting]
            outcomes = np.asarray(record, dtype=np.int64)

            if outcomes.shape != (self.shots_per_setting,):
                raise CountDataError(
                    f"shot record has {outcomes.size} entries, expected "
                    f"{self.shots_per_setting}",
                    setting,
                    label,
                )
            if np.any(outcomes < 0) or np.any(outcomes >= counts.shape[1]):
                raise CountDataError(
                    "shot record holds an unknown outcome", setting, label
                )
            tally = np.bincount(outcomes, minlength=counts.shape[1])
            if np.any(tally != counts[setting]):
                raise CountDataError(
                    "shot record disagrees with the counts", setting, label
                )

            outcomes.setflags(write=False)
            records.append(outcomes)

        return tuple(records)

    @property
    def num_settings(self) -> int:
        return self.counts.shape[0]

    @property
    def num_outcomes(self) -> int:
        return self.counts.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.num_settings, self.num_outcomes


@dataclass(frozen=True, eq=False)
class FrequencyTable:
    """Relative frequencies ``f_k^s = m_k^s / N_s``."""

    freqs: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.freqs.shape  # type: ignore

    @property
    def flat(self) -> np.ndarray:
        return self.freqs.reshape(-1)


def frequencies(data: CountData) -> FrequencyTable:
    """Converts counts into relative frequencies."""
    freqs = data.counts / float(data.shots_per_setting)
    freqs.setflags(write=False)
    return FrequencyTable(freqs)


def check_compatible(data: CountData, model: MeasurementModel) -> None:
    """Checks that the counts were taken with the given model.

    Raises:
        CountDataError: The table shape or a setting label differs.
    """
    if data.shape != model.shape:
        raise CountDataError(
            f"counts have shape {data.shape} but the model has "
            f"{model.num_settings} settings with {model.num_outcomes} "
            "outcomes"
        )

    for setting, (ours, theirs) in enumerate(
        zip(data.setting_labels, model.setting_labels)
    ):
        if ours != theirs:
            raise CountDataError(
                f"basis {ours!r} where the model expects {theirs!r}",
                setting,
                ours,
            )


def _with_records(
    data: CountData,
    records: list[np.ndarray],
    shots: int,
    metadata: dict[str, Any],
) -> CountData:
    counts = np.array(
        [
            np.bincount(record, minlength=data.num_outcomes)
            for record in records
        ]
    )
    return CountData(
        shots,
        counts,
        data.setting_labels,
        data.num_qubits,
        metadata,
        tuple(records),
    )


def split_half(data: CountData, seed: int) -> tuple[CountData, CountData]:
    """Splits the data into two halves of ``N_s / 2`` shots per setting.

    Recorded shots are split by acquisition order (first half against second
    half). Aggregated counts are split by drawing ``N_s / 2`` shots without
    replacement, independently per setting from the stream
    ``(seed, setting)``.

    Args:
        data (CountData): The data to split.
        seed (int): The 64-bit seed of the partition.

    Raises:
        OddShotCountError: ``N_s`` is odd.

    Returns:
        tuple[CountData, CountData]: The two halves; their counts add up to
            the original counts.
    """
    check_seed(seed)
    if data.shots_per_setting % 2 != 0:
        raise OddShotCountError(data.shots_per_setting)

    half = data.shots_per_setting // 2
    first_meta = {**data.metadata, "half": 1, "split_seed": seed}
    second_meta = {**data.metadata, "half": 2, "split_seed": seed}

    if data.shot_records is not None:
        return (
            _with_records(
                data,
                [record[:half] for record in data.shot_records],
                half,
                first_meta,
            ),
            _with_records(
                data,
                [record[half:] for record in data.shot_records],
                half,
                second_meta,
            ),
        )

    first = np.empty_like(data.counts)
    for setting in range(data.num_settings):
        generator = stream(seed, setting)
        first[setting] = generator.multivariate_hypergeometric(
            data.counts[setting], half
        )

    return (
        CountData(
            half, first, data.setting_labels, data.num_qubits, first_meta
        ),
        CountData(
            half,
            data.counts - first,
            data.setting_labels,
            data.num_qubits,
            second_meta,
        ),
    )


def drop_one_shot(data: CountData, seed: int) -> CountData:
    """Removes one shot per setting, e.g. to make ``N_s`` even.

    The last recorded shot is dropped when shot records exist; otherwise the
    dropped outcome is drawn with probability proportional to its count.
    """
    if data.shots_per_setting < 2:
        raise CountDataError("cannot drop the only shot of a setting")

    metadata = {**data.metadata, "dropped_shot_seed": seed}

    if data.shot_records is not None:
        return _with_records(
            data,
            [record[:-1] for record in data.shot_records],
            data.shots_per_setting - 1,
            metadata,
        )

    counts = data.counts.copy()
    for setting in range(data.num_settings):
        generator = stream(seed, setting)
        outcome = generator.choice(
            data.num_outcomes,
            p=counts[setting] / data.shots_per_setting,
        )
        counts[setting, outcome] -= 1

    return CountData(
        data.shots_per_setting - 1,
        counts,
        data.setting_labels,
        data.num_qubits,
        metadata,
    )


def counts_to_dict(data: CountData) -> dict[str, Any]:
    """Serializes count data into the ``tomocert-counts/1`` document."""
    document: dict[str, Any] = {
        "format": COUNTS_FORMAT,
        "qubits": data.num_qubits,
        "shots_per_setting": data.shots_per_setting,
        "settings": [
            {"basis": label, "counts": row.tolist()}
            for label, row in zip(data.setting_labels, data.counts)
        ],
        "metadata": data.metadata,
    }

    if data.shot_records is not None:
        document["shot_records"] = [
            record.tolist() for record in data.shot_records
        ]

    return document


def counts_from_dict(document: Any) -> CountData:
    """Parses and validates a ``tomocert-counts/1`` document.

    Raises:
        CountFileError: The document is structurally malformed.
        CountDataError: The counts violate an invariant; the error names
            the offending setting.
    """
    if not isinstance(document, dict):
        raise CountFileError("count document must be a JSON object")
    if document.get("format") != COUNTS_FORMAT:
        raise CountFileError(
            f"unsupported count format {document.get('format')!r}, "
            f"expected {COUNTS_FORMAT!r}"
        )

    try:
        qubits = int(document["qubits"])
        shots = int(document["shots_per_setting"])
        settings = list(document["settings"])
        labels = [str(entry["basis"]) for entry in settings]
        rows = [list(entry["counts"]) for entry in settings]
        metadata = dict(document.get("metadata", {}))
        raw_records = document.get("shot_records")
    except (KeyError, TypeError, ValueError) as error:
        raise CountFileError(f"malformed count document: {error}") from error

    if not rows:
        raise CountFileError("count document lists no settings")

    for setting, row in enumerate(rows):
        if len(row) != len(rows[0]):
            raise CountDataError(
                f"{len(row)} outcomes where setting 0 has {len(rows[0])}",
                setting,
                labels[setting],
            )
        for value in row:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise CountDataError(
                    f"count {value!r} is not a number",
                    setting,
                    labels[setting],
                )

    records = None
    if raw_records is not None:
        records = tuple(np.asarray(record) for record in raw_records)

    return CountData(
        shots,
        np.array(rows, dtype=float),
        tuple(labels),
        qubits,
        metadata,
        records,
    )


def save_counts(data: CountData, sink: BinaryIO) -> None:
    """Writes a count file to a binary stream."""
    text = json.dumps(counts_to_dict(data), indent=2, sort_keys=True)
    sink.write(text.encode("utf-8"))


def load_counts(source: BinaryIO) -> CountData:
    """Reads and validates a count file from a binary stream.

    Raises:
        CountFileError: The stream is not a parseable count file.
        CountDataError: The counts violate an invariant.
    """
    try:
        document = json.loads(source.read().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as error:
        raise CountFileError(
            f"count file is not valid JSON: {error}"
        ) from error

    data = counts_from_dict(document)
    logger.debug(
        "loaded %d settings x %d outcomes, %d shots per setting",
        data.num_settings,
        data.num_outcomes,
        data.shots_per_setting,
    )
    return data


def load_counts_file(path: str) -> CountData:
    """Reads the count file at the given path."""
    with open(path, "rb") as count_file:
        return load_counts(count_file)
