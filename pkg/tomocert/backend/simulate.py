"""
Simulated tomography experiments.

States come from a small library of named multi-qubit states. Errors either
perturb the measurement model once (crosstalk), perturb the state once
(depolarizing) or change from shot to shot (drift, rotation noise). Per-shot
errors produce count data with shot records in acquisition order, so that
halving by time sees the drift.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Final, Iterator, Optional, Union

import numpy as np

from tomocert.backend import TomocertError
from tomocert.backend.data import CountData
from tomocert.backend.measmodel import (
    MeasurementModel,
    TableShapeError,
    predict_probs,
)
from tomocert.backend.rng import check_seed, stream

logger = logging.getLogger(__name__)

PROBABILITY_TOLERANCE: Final[float] = 1e-9
STATE_TOLERANCE: Final[float] = 1e-9

# stream keys separating the random draws of one simulation
_SAMPLING_KEY: Final[int] = 1
_ROTATION_KEY: Final[int] = 2

# addressed phases distinguishing the measurement bases
BASIS_PHASES: Final[dict[str, float]] = {
    "X": 0.0,
    "Y": math.pi / 2.0,
    "Z": math.pi,
}


class StateSpecError(TomocertError):
    """The state cannot be built"""

    pass


class ErrorSpecError(TomocertError):
    """The error specification is malformed or out of range"""

    pass


class ProbabilityTableError(TomocertError):
    """A row of a probability table is not a probability vector"""

    pass


class StateName(Enum):
    GHZ = "ghz"
    BELL_PSI_MINUS = "bell_psi_minus"
    W = "w"
    SSSS = "ssss"
    SMOLIN = "smolin"
    MAXIMALLY_MIXED = "maximally_mixed"
    CUSTOM = "custom"


_REQUIRED_QUBITS: Final[dict[StateName, int]] = {
    StateName.BELL_PSI_MINUS: 2,
    StateName.SMOLIN: 4,
}


@dataclass(frozen=True, eq=False)
class StateSpec:
    """A named target state on ``num_qubits`` qubits."""

    name: StateName
    num_qubits: int
    matrix: Optional[np.ndarray] = None
    """The density matrix of a custom state"""

    @staticmethod
    def parse(name: str, num_qubits: int) -> StateSpec:
        try:
            return StateSpec(StateName(name), num_qubits)
        except ValueError as error:
            known = ", ".join(member.value for member in StateName)
            raise StateSpecError(
                f"unknown state {name!r}, expected one of {known}"
            ) from error

    def describe(self) -> str:
        return self.name.value


def _ket(bits: str) -> np.ndarray:
    vector = np.zeros(2 ** len(bits), dtype=complex)
    vector[int(bits, 2)] = 1.0
    return vector


def _projector(vector: np.ndarray) -> np.ndarray:
    return np.outer(vector, vector.conj())


def _bell_states() -> list[np.ndarray]:
    root = math.sqrt(0.5)
    return [
        root * (_ket("00") + _ket("11")),
        root * (_ket("00") - _ket("11")),
        root * (_ket("01") + _ket("10")),
        root * (_ket("01") - _ket("10")),
    ]


def _checked_custom(matrix: np.ndarray, num_qubits: int) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=complex)
    dim = 2**num_qubits

    if matrix.shape != (dim, dim):
        raise StateSpecError(
            f"custom state has shape {matrix.shape}, {num_qubits} qubits "
            f"need {(dim, dim)}"
        )
    if np.abs(matrix - matrix.conj().T).max() > STATE_TOLERANCE:
        raise StateSpecError("custom state is not Hermitian")
    if abs(np.trace(matrix) - 1.0) > STATE_TOLERANCE:
        raise StateSpecError(
            f"custom state has trace {np.trace(matrix).real:.6g}"
        )
    if np.linalg.eigvalsh(matrix)[0] < -STATE_TOLERANCE:
        raise StateSpecError("custom state is not positive semidefinite")

    return 0.5 * (matrix + matrix.conj().T)


def make_state(spec: StateSpec) -> np.ndarray:
    """Builds the density matrix of a state specification.

    Raises:
        StateSpecError: The qubit count does not suit the state, or a
            custom matrix is not a density matrix.
    """
    n = spec.num_qubits
    if n < 1:
        raise StateSpecError(f"states need at least one qubit, got {n}")

    required = _REQUIRED_QUBITS.get(spec.name)
    if required is not None and n != required:
        raise StateSpecError(
            f"state {spec.name.value} is defined on {required} qubits, "
            f"got {n}"
        )

    dim = 2**n
    match spec.name:
        case StateName.GHZ:
            vector = _ket("0" * n) + _ket("1" * n)
            return _projector(vector / math.sqrt(2.0))
        case StateName.BELL_PSI_MINUS:
            return _projector(_bell_states()[3])
        case StateName.W:
            vector = sum(
                _ket("0" * j + "1" + "0" * (n - j - 1)) for j in range(n)
            )
            return _projector(vector / math.sqrt(n))
        case StateName.SSSS:
            return _projector(_ket("1" * n))
        case StateName.SMOLIN:
            return 0.25 * sum(
                np.kron(_projector(bell), _projector(bell))
                for bell in _bell_states()
            )
        case StateName.MAXIMALLY_MIXED:
            return np.eye(dim, dtype=complex) / dim
        case StateName.CUSTOM:
            if spec.matrix is None:
                raise StateSpecError("a custom state needs a matrix")
            return _checked_custom(spec.matrix, n)


@dataclass(frozen=True)
class NoError:
    def describe(self) -> str:
        return "none"


@dataclass(frozen=True)
class Crosstalk:
    """Addressed phases leak to nearest neighbours with ratio ``epsilon``."""

    epsilon: float

    def __post_init__(self) -> None:
        if not self.epsilon >= 0.0:
            raise ErrorSpecError(
                f"crosstalk must be non-negative, got {self.epsilon}"
            )

    def describe(self) -> str:
        return f"crosstalk:{self.epsilon!r}"


@dataclass(frozen=True)
class Depolarizing:
    q: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.q <= 1.0:
            raise ErrorSpecError(
                f"depolarizing strength must lie in [0, 1], got {self.q}"
            )

    def describe(self) -> str:
        return f"depolarizing:{self.q!r}"


@dataclass(frozen=True)
class Drift:
    """The state moves linearly towards ``target`` over the shots."""

    target: StateSpec
    gamma: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ErrorSpecError(
                f"drift strength must lie in [0, 1], got {self.gamma}"
            )

    def describe(self) -> str:
        return f"drift:{self.target.describe()},{self.gamma!r}"


@dataclass(frozen=True)
class RotationNoise:
    """Per-shot collective x rotation with normal offset ``sigma``."""

    sigma: float

    def __post_init__(self) -> None:
        if not self.sigma >= 0.0:
            raise ErrorSpecError(
                f"rotation noise must be non-negative, got {self.sigma}"
            )

    def describe(self) -> str:
        return f"rotation_noise:{self.sigma!r}"


ErrorSpec = Union[NoError, Crosstalk, Depolarizing, Drift, RotationNoise]


def is_per_shot(err: ErrorSpec) -> bool:
    return isinstance(err, (Drift, RotationNoise))


def _parse_float(text: str, name: str) -> float:
    try:
        return float(text)
    except ValueError as error:
        raise ErrorSpecError(
            f"{name} expects a number, got {text!r}"
        ) from error


def parse_error_spec(text: str, num_qubits: int) -> ErrorSpec:
    """Parses ``name[:param[,param]]``.

    Recognized forms are ``none``, ``crosstalk:EPS``, ``depolarizing:Q``,
    ``drift:TARGET,GAMMA`` and ``rotation_noise:SIGMA``.

    Raises:
        ErrorSpecError: The text does not match any form.
    """
    name, _, raw = text.strip().partition(":")
    params = [part.strip() for part in raw.split(",")] if raw else []

    expected = {
        "none": 0,
        "crosstalk": 1,
        "depolarizing": 1,
        "drift": 2,
        "rotation_noise": 1,
    }
    if name not in expected:
        raise ErrorSpecError(
            f"unknown error {name!r}, expected one of "
            f"{', '.join(expected)}"
        )
    if len(params) != expected[name]:
        raise ErrorSpecError(
            f"{name} takes {expected[name]} parameter(s), got {len(params)}"
        )

    match name:
        case "none":
            return NoError()
        case "crosstalk":
            return Crosstalk(_parse_float(params[0], name))
        case "depolarizing":
            return Depolarizing(_parse_float(params[0], name))
        case "drift":
            try:
                target = StateSpec.parse(params[0], num_qubits)
            except StateSpecError as error:
                raise ErrorSpecError(str(error)) from error
            return Drift(target, _parse_float(params[1], name))
        case _:
            return RotationNoise(_parse_float(params[0], name))


def _ry(angle: float) -> np.ndarray:
    c, s = math.cos(angle / 2.0), math.sin(angle / 2.0)
    return np.array([[c, -s], [s, c]], dtype=complex)


def _rz(angle: float) -> np.ndarray:
    return np.diag([np.exp(-0.5j * angle), np.exp(0.5j * angle)])


def _rx(angle: float) -> np.ndarray:
    c, s = math.cos(angle / 2.0), math.sin(angle / 2.0)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


def _kron_all(factors: list[np.ndarray]) -> np.ndarray:
    result = np.ones((1, 1), dtype=complex)
    for factor in factors:
        result = np.kron(result, factor)
    return result


def leaked_phases(label: str, epsilon: float) -> np.ndarray:
    """Computes ``Theta_k = theta_k + epsilon * sum_{|j-k|=1} theta_j``."""
    phases = np.array([BASIS_PHASES[letter] for letter in label])
    leaked = phases.copy()
    leaked[1:] += epsilon * phases[:-1]
    leaked[:-1] += epsilon * phases[1:]
    return leaked


def basis_change(label: str, epsilon: float = 0.0) -> np.ndarray:
    """Builds the unitary rotating a Pauli setting onto the computational
    basis, with addressed phases leaking at ratio ``epsilon``.
    """
    collective = _ry(-math.pi / 2.0)
    factors = []
    for letter, phase in zip(label, leaked_phases(label, epsilon)):
        prepare = collective if letter == "Z" else np.eye(2, dtype=complex)
        factors.append(collective @ _rz(-phase) @ prepare)
    return _kron_all(factors)


def crosstalk_model(
    model: MeasurementModel, epsilon: float
) -> MeasurementModel:
    """Builds the effects ``U(eps)^dag |k><k| U(eps)`` of every setting.

    Raises:
        ErrorSpecError: The model is not a Pauli scheme.
    """
    if model.scheme != "pauli":
        raise ErrorSpecError("crosstalk is defined for Pauli schemes only")

    effects = np.empty_like(model.effects)
    for setting, label in enumerate(model.setting_labels):
        vectors = basis_change(label, epsilon).conj()
        effects[setting] = np.einsum("ki,kj->kij", vectors, vectors.conj())

    return MeasurementModel(
        model.num_qubits, model.setting_labels, effects, "custom"
    )


def apply_error(
    model: MeasurementModel,
    state: np.ndarray,
    err: ErrorSpec,
    shot_index: int = 0,
    shots: int = 1,
    rng: Optional[np.random.Generator] = None,
) -> tuple[MeasurementModel, np.ndarray]:
    """Computes the effective model and state of one shot.

    Args:
        model (MeasurementModel): The ideal model.
        state (np.ndarray): The ideal state.
        err (ErrorSpec): The systematic error.
        shot_index (int): Index ``i`` of the shot within its setting.
        shots (int): ``N_s``.
        rng (np.random.Generator): Source of the rotation offset, needed
            for rotation noise only.

    Returns:
        tuple[MeasurementModel, np.ndarray]: The effective model and state.
    """
    match err:
        case NoError():
            return model, state
        case Crosstalk(epsilon):
            return crosstalk_model(model, epsilon), state
        case Depolarizing(q):
            mixed = np.eye(model.dim, dtype=complex) / model.dim
            return model, (1.0 - q) * state + q * mixed
        case Drift(target, gamma):
            weight = gamma * shot_index / shots
            return model, (1.0 - weight) * state + weight * make_state(target)
        case RotationNoise(sigma):
            if rng is None:
                raise ValueError("rotation noise needs a random generator")
            if model.num_qubits < 1:
                raise ErrorSpecError("rotation noise needs a qubit model")
            rotation = _kron_all(
                [_rx(rng.normal(0.0, sigma))] * model.num_qubits
            )
            return model, rotation @ state @ rotation.conj().T

    raise ErrorSpecError(f"unsupported error {err!r}")


def _checked_table(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 2:
        raise ProbabilityTableError(
            f"probability table must be 2-dimensional, got {probs.shape}"
        )

    for setting, row in enumerate(probs):
        if np.any(row < -PROBABILITY_TOLERANCE):
            raise ProbabilityTableError(
                f"setting {setting} has a negative probability {row.min()}"
            )
        if abs(row.sum() - 1.0) > PROBABILITY_TOLERANCE:
            raise ProbabilityTableError(
                f"setting {setting} sums to {row.sum():.12g}"
            )

    clipped = np.clip(probs, 0.0, None)
    return clipped / clipped.sum(axis=1, keepdims=True)


def sample_counts(
    probs: np.ndarray,
    shots: int,
    seed: int,
    setting_labels: Optional[tuple[str, ...]] = None,
    num_qubits: int = 0,
    metadata: Optional[dict[str, Any]] = None,
) -> CountData:
    """Draws multinomial counts, independently per setting.

    Setting ``s`` draws from its own stream, so a row's counts depend only
    on the seed and the row.

    Raises:
        ProbabilityTableError: A row is negative or does not sum to one
            within ``1e-9``.
    """
    check_seed(seed)
    if shots < 1:
        raise ValueError(f"shots must be positive, got {shots}")

    table = _checked_table(probs)
    counts = np.empty(table.shape, dtype=np.int64)
    for setting, row in enumerate(table):
        generator = stream(seed, _SAMPLING_KEY, setting)
        counts[setting] = generator.multinomial(shots, row)

    if setting_labels is None:
        setting_labels = tuple(f"s{setting}" for setting in range(len(table)))

    return CountData(
        shots,
        counts,
        tuple(setting_labels),
        num_qubits,
        {} if metadata is None else dict(metadata),
    )


def shot_tables(
    model: MeasurementModel,
    state: np.ndarray,
    err: ErrorSpec,
    shots: int,
    seed: int,
) -> Iterator[np.ndarray]:
    """Yields the probability table of every shot index in order."""
    generator = stream(seed, _ROTATION_KEY)
    for shot in range(shots):
        shot_model, shot_state = apply_error(
            model, state, err, shot, shots, generator
        )
        yield predict_probs(shot_model, shot_state)


def expected_frequencies(
    model: MeasurementModel,
    state: np.ndarray,
    err: ErrorSpec,
    shots: int,
    seed: int,
) -> np.ndarray:
    """Computes the expected frequencies, the mean of the shot tables."""
    if not is_per_shot(err):
        shot_model, shot_state = apply_error(model, state, err)
        return predict_probs(shot_model, shot_state)

    return sum(shot_tables(model, state, err, shots, seed)) / shots


def _sample_records(tables: np.ndarray, seed: int) -> tuple[np.ndarray, ...]:
    # tables has shape (N, S, K); one categorical draw per shot
    cumulative = np.cumsum(tables, axis=2)
    records = []
    for setting in range(tables.shape[1]):
        generator = stream(seed, _SAMPLING_KEY, setting)
        uniforms = generator.random(tables.shape[0])
        bounds = cumulative[:, setting, :-1]
        records.append(
            np.sum(bounds <= uniforms[:, None], axis=1).astype(np.int64)
        )
    return tuple(records)


def simulate_counts(
    model: MeasurementModel,
    state: StateSpec,
    err: ErrorSpec,
    shots: int,
    seed: int,
) -> CountData:
    """Simulates ``shots`` repetitions of every setting.

    Static errors sample a multinomial per setting; per-shot errors draw
    every shot from its own table and keep the shot records.

    Returns:
        CountData: The counts, with the state, error, shots and seed in
            the metadata.
    """
    check_seed(seed)
    if shots < 1:
        raise ValueError(f"shots must be positive, got {shots}")

    if state.num_qubits != model.num_qubits:
        raise StateSpecError(
            f"state has {state.num_qubits} qubits, the model "
            f"{model.num_qubits}"
        )

    density = make_state(state)
    metadata = {
        "source": "simulation",
        "state": state.describe(),
        "error": err.describe(),
        "shots": shots,
        "seed": seed,
    }
    logger.debug("simulating %s with error %s", state.describe(), err)

    if not is_per_shot(err):
        probs = expected_frequencies(model, density, err, shots, seed)
        return sample_counts(
            probs,
            shots,
            seed,
            model.setting_labels,
            model.num_qubits,
            metadata,
        )

    tables = np.array(
        [
            _checked_table(table)
            for table in shot_tables(model, density, err, shots, seed)
        ]
    )
    if tables.shape[1:] != model.shape:
        raise TableShapeError(model.shape, tables.shape[1:])

    records = _sample_records(tables, seed)
    counts = np.array(
        [
            np.bincount(record, minlength=model.num_outcomes)
            for record in records
        ]
    )

    return CountData(
        shots,
        counts,
        model.setting_labels,
        model.num_qubits,
        metadata,
        records,
    )
