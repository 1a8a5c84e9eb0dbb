from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from typing import Any, Optional

import platformdirs

from tomocert.backend import TomocertError
from tomocert.backend.reconstruct import SolverOptions

logger = logging.getLogger(__name__)

PREFERENCE_FILE_NAME = "preference.json"


class WitnessChoice(Enum):
    """Which witnesses ``certify witness`` builds"""

    POSITIVITY = "wp"
    KERNEL = "wl"
    BOTH = "both"


class CorruptedPreferenceFileError(TomocertError):
    """Raised when the preference file cannot be loaded due to corruption"""

    pass


@dataclass(frozen=True)
class Preference:
    """The tunable defaults of every command"""

    alpha: float = 1e-3
    witness: WitnessChoice = WitnessChoice.BOTH
    bootstrap_samples: int = 1000
    literal_median: bool = False
    """Solve ``Q(D'/2, m) = 1/2`` instead of ``Q(D'/2, m/2) = 1/2``"""
    seed: int = 0
    """Seed of ``certify`` when no flag gives one"""
    drop_odd_shot: bool = False
    emit_samples: bool = False
    survival_points: int = 200
    threads: Optional[int] = None
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.bootstrap_samples < 1:
            raise ValueError("bootstrap needs at least one sample")
        if self.survival_points < 2:
            raise ValueError("the survival grid needs at least two points")
        if self.threads is not None and self.threads < 1:
            raise ValueError("the thread count must be positive")

    def to_dict(self) -> dict[str, Any]:
        document = asdict(self)
        document["witness"] = self.witness.value
        return document

    def updated(self, document: dict[str, Any]) -> Preference:
        """Returns a copy overriding the keys present in ``document``.

        Raises:
            CorruptedPreferenceFileError: A key is unknown or ill-typed.
        """
        known = {entry.name for entry in fields(self)}
        unknown = set(document) - known
        if unknown:
            raise CorruptedPreferenceFileError(
                f"unknown preference keys {sorted(unknown)}"
            )

        changes = dict(document)
        try:
            if "witness" in changes:
                changes["witness"] = WitnessChoice(changes["witness"])
            if "solver" in changes:
                changes["solver"] = replace(self.solver, **changes["solver"])
            return replace(self, **changes)
        except (TypeError, ValueError) as error:
            raise CorruptedPreferenceFileError(str(error)) from error

    def save(self, file_path: str) -> None:
        """
        Saves the preference to the file at the given path.
        """
        with open(file_path, "w", encoding="utf-8") as preference_file:
            json.dump(self.to_dict(), preference_file, indent=2)

    @staticmethod
    def load_from_file(path: str) -> Preference:
        """
        Loads the preference from the file at the given path.

        Keys absent from the file keep their defaults.

        Raises:
            CorruptedPreferenceFileError: The file is not a preference.
        """
        with open(path, "rb") as preference_file:
            try:
                document = json.loads(preference_file.read().decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as error:
                raise CorruptedPreferenceFileError(str(error)) from error

        if not isinstance(document, dict):
            raise CorruptedPreferenceFileError("preference is not an object")

        return Preference().updated(document)


def user_preference_path() -> str:
    """Gets the path of the per-user preference file."""
    return os.path.join(
        platformdirs.user_config_dir("tomocert", "tomocert"),
        PREFERENCE_FILE_NAME,
    )


def load_preference(config_path: Optional[str] = None) -> Preference:
    """Loads the preference in effect before command-line flags apply.

    An explicit file must load. The per-user file is optional; when it is
    corrupted it is ignored with a warning.
    """
    if config_path is not None:
        return Preference.load_from_file(config_path)

    path = user_preference_path()
    if not os.path.exists(path):
        return Preference()

    try:
        return Preference.load_from_file(path)
    except (CorruptedPreferenceFileError, OSError) as error:
        logger.warning("ignoring corrupted preference %s: %s", path, error)
        return Preference()
