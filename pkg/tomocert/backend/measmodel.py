"""
Measurement models and their linear-algebraic structure.

A measurement model attributes a positive operator ``M_k^s`` to outcome
``k`` of setting ``s``. Every test in this package works in one fixed real
coordinate system for Hermitian operators: the normalized identity first,
then the generalized Gell-Mann matrices (symmetric off-diagonal pairs,
antisymmetric off-diagonal pairs, traceless diagonals), orthonormal under
the trace inner product. The design matrix ``B`` collects the coordinates of
every effect as a column, so that ``tr(X M_k^s) = (B^T x)[s, k]`` for the
coordinates ``x`` of any Hermitian ``X``.

Coefficient tables over effects are flattened row-major, i.e. entry
``(s, k)`` sits at index ``s * K + k``.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, BinaryIO, Final

import numpy as np
import scipy.linalg

from tomocert.backend import TomocertError

logger = logging.getLogger(__name__)

MODEL_FORMAT: Final[str] = "tomocert-model/1"
MAX_PAULI_QUBITS: Final[int] = 6
EFFECT_TOLERANCE: Final[float] = 1e-10
KERNEL_SIGN_TOLERANCE: Final[float] = 1e-12

_SQRT_HALF = np.sqrt(0.5)

# Rows are the +1 and -1 eigenvectors; sigma_z|0> = |0>.
PAULI_EIGENVECTORS: Final[dict[str, np.ndarray]] = {
    "X": np.array([[1, 1], [1, -1]], dtype=complex) * _SQRT_HALF,
    "Y": np.array([[1, 1j], [1, -1j]], dtype=complex) * _SQRT_HALF,
    "Z": np.array([[1, 0], [0, 1]], dtype=complex),
}


class ModelValidationError(TomocertError):
    """The effects violate positivity or the completeness relation"""

    pass


@dataclass(eq=False)
class RankDeficientModelError(ModelValidationError):
    """The effects do not span the space of Hermitian operators"""

    rank: int
    expected_rank: int

    def __str__(self) -> str:
        return (
            f"effects span a space of rank {self.rank}, a full "
            f"reconstruction needs rank {self.expected_rank}"
        )


@dataclass(eq=False)
class DimensionMismatchError(TomocertError):
    """An operator does not have the dimension of the model"""

    expected: int
    actual: tuple[int, ...]

    def __str__(self) -> str:
        return (
            f"expected a {self.expected}x{self.expected} operator, "
            f"got shape {self.actual}"
        )


class ModelFileError(TomocertError):
    """The model file is malformed or describes an invalid model"""

    pass


@dataclass(eq=False)
class TableShapeError(TomocertError):
    """A table over settings and outcomes has the wrong shape"""

    expected: tuple[int, ...]
    actual: tuple[int, ...]

    def __str__(self) -> str:
        return f"expected a table of shape {self.expected}, got {self.actual}"


def _diagonal_basis(dim: int) -> np.ndarray:
    # row 0 is the normalized identity, rows l >= 1 are traceless
    basis = np.zeros((dim, dim))
    basis[0] = 1.0 / np.sqrt(dim)

    for level in range(1, dim):
        basis[level, :level] = 1.0
        basis[level, level] = -level
        basis[level] /= np.sqrt(level * (level + 1))

    return basis


def hermitian_basis_coordinates(operators: np.ndarray) -> np.ndarray:
    """Computes the real coordinates of Hermitian operators.

    Args:
        operators (np.ndarray): Array of shape ``(..., d, d)``.

    Returns:
        np.ndarray: Real array of shape ``(..., d**2)``; entry 0 is the
            coordinate along ``I / sqrt(d)``.
    """
    operators = np.asarray(operators)
    dim = operators.shape[-1]
    rows, cols = np.triu_indices(dim, 1)

    diagonal = np.real(np.diagonal(operators, axis1=-2, axis2=-1))
    diagonal_coordinates = diagonal @ _diagonal_basis(dim).T
    upper = operators[..., rows, cols]

    return np.concatenate(
        [
            diagonal_coordinates[..., :1],
            np.sqrt(2.0) * upper.real,
            -np.sqrt(2.0) * upper.imag,
            diagonal_coordinates[..., 1:],
        ],
        axis=-1,
    )


def from_hermitian_coordinates(coordinates: np.ndarray) -> np.ndarray:
    """Inverse of `hermitian_basis_coordinates`.

    Args:
        coordinates (np.ndarray): Real array of shape ``(..., d**2)``.

    Returns:
        np.ndarray: Complex Hermitian array of shape ``(..., d, d)``.
    """
    coordinates = np.asarray(coordinates, dtype=float)
    dim = int(round(np.sqrt(coordinates.shape[-1])))
    pairs = dim * (dim - 1) // 2
    rows, cols = np.triu_indices(dim, 1)

    symmetric = coordinates[..., 1 : 1 + pairs]
    antisymmetric = coordinates[..., 1 + pairs : 1 + 2 * pairs]
    diagonal_coordinates = np.concatenate(
        [coordinates[..., :1], coordinates[..., 1 + 2 * pairs :]], axis=-1
    )

    operators = np.zeros(coordinates.shape[:-1] + (dim, dim), dtype=complex)
    upper = (symmetric - 1j * antisymmetric) * _SQRT_HALF
    operators[..., rows, cols] = upper
    operators[..., cols, rows] = upper.conj()

    diagonal = diagonal_coordinates @ _diagonal_basis(dim)
    operators[..., np.arange(dim), np.arange(dim)] = diagonal

    return operators


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    """The attributed effects of every setting and outcome.

    ``effects`` has shape ``(S, K, d, d)``. ``num_qubits`` is 0 for models
    of systems that are not made of qubits.
    """

    num_qubits: int
    setting_labels: tuple[str, ...]
    effects: np.ndarray
    scheme: str = "custom"

    def __post_init__(self) -> None:
        effects = np.array(self.effects, dtype=complex)

        if effects.ndim != 4 or effects.shape[2] != effects.shape[3]:
            raise ModelValidationError(
                f"effects must have shape (S, K, d, d), got {effects.shape}"
            )

        if len(self.setting_labels) != effects.shape[0]:
            raise ModelValidationError(
                f"{len(self.setting_labels)} setting labels for "
                f"{effects.shape[0]} settings"
            )

        if self.num_qubits < 0 or (
            self.num_qubits > 0 and effects.shape[2] != 2**self.num_qubits
        ):
            raise ModelValidationError(
                f"dimension {effects.shape[2]} does not match "
                f"{self.num_qubits} qubits"
            )

        effects.setflags(write=False)
        object.__setattr__(self, "effects", effects)
        object.__setattr__(self, "setting_labels", tuple(self.setting_labels))

    @property
    def dim(self) -> int:
        return self.effects.shape[2]

    @property
    def num_settings(self) -> int:
        return self.effects.shape[0]

    @property
    def num_outcomes(self) -> int:
        return self.effects.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        """Gets ``(S, K)``, the shape of count and coefficient tables."""
        return self.num_settings, self.num_outcomes

    @cached_property
    def coordinate_matrix(self) -> np.ndarray:
        """Gets the real ``d**2 x (S * K)`` matrix of effect coordinates."""
        flat = self.effects.reshape(-1, self.dim, self.dim)
        coordinates = hermitian_basis_coordinates(flat).T.copy()
        coordinates.setflags(write=False)
        return coordinates

    @cached_property
    def design(self) -> DesignMatrix:
        """Gets the design matrix, built on first use."""
        return build_design_matrix(self)


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """The design matrix ``B`` together with its pseudoinverse.

    The kernel basis and the range projector are materialized on first
    access only; `range_projection` and `kernel_projection` work through
    an orthonormal basis of the row space and never build the
    ``(S * K) x (S * K)`` projectors.
    """

    matrix: np.ndarray
    pinv: np.ndarray
    rank: int
    dim: int
    shape: tuple[int, int]
    row_basis: np.ndarray = field(repr=False)

    @property
    def num_coefficients(self) -> int:
        return self.matrix.shape[1]

    @cached_property
    def kernel_basis(self) -> np.ndarray:
        """Gets an orthonormal basis of ``{u : B u = 0}`` as columns.

        The first component above 1e-12 in magnitude of each column is
        positive.
        """
        _, _, vh = scipy.linalg.svd(self.matrix, full_matrices=True)
        basis = vh[self.rank :].T.copy()

        for column in range(basis.shape[1]):
            leading = np.flatnonzero(
                np.abs(basis[:, column]) > KERNEL_SIGN_TOLERANCE
            )
            if leading.size > 0 and basis[leading[0], column] < 0:
                basis[:, column] *= -1.0

        return basis

    @cached_property
    def traceless_pinv(self) -> np.ndarray:
        """Gets the pseudoinverse of the traceless block of ``B^T``.

        Least squares with the trace coordinate held at ``1 / sqrt(d)``
        solves for the remaining coordinates through this matrix.
        """
        return scipy.linalg.pinv(self.matrix[1:].T)

    @cached_property
    def range_projector(self) -> np.ndarray:
        """Gets the projector onto the row space of ``B``."""
        return self.row_basis.T @ self.row_basis

    def range_projection(self, coefficients: np.ndarray) -> np.ndarray:
        """Projects a coefficient table onto the row space of ``B``.

        Args:
            coefficients (np.ndarray): Table of shape ``(S, K)`` or the
                flattened vector.

        Returns:
            np.ndarray: The projection, in the shape it was given.
        """
        vector = np.asarray(coefficients, dtype=float)
        flat = vector.reshape(-1)
        projected = self.row_basis.T @ (self.row_basis @ flat)
        return projected.reshape(vector.shape)

    def kernel_projection(self, coefficients: np.ndarray) -> np.ndarray:
        """Projects a coefficient table onto the kernel of ``B``."""
        vector = np.asarray(coefficients, dtype=float)
        return vector - self.range_projection(vector)

    def induced_operator(self, coefficients: np.ndarray) -> np.ndarray:
        """Computes ``sum_{s,k} w_k^s M_k^s`` for a coefficient table."""
        flat = np.asarray(coefficients, dtype=float).reshape(-1)
        return from_hermitian_coordinates(self.matrix @ flat)

    def predict(self, operator: np.ndarray) -> np.ndarray:
        """Computes the table ``tr(X M_k^s)`` through the coordinates."""
        operator = np.asarray(operator)
        if operator.shape != (self.dim, self.dim):
            raise DimensionMismatchError(self.dim, operator.shape)

        coordinates = hermitian_basis_coordinates(operator)
        return (self.matrix.T @ coordinates).reshape(self.shape)


@dataclass(frozen=True)
class ModelDiagnostics:
    """The outcome of `validate_model`."""

    rank: int
    expected_rank: int
    hermiticity_violations: list[tuple[int, int, float]]
    psd_violations: list[tuple[int, int, float]]
    completeness_violations: list[tuple[int, float]]

    @property
    def passed(self) -> bool:
        return (
            self.rank == self.expected_rank
            and not self.hermiticity_violations
            and not self.psd_violations
            and not self.completeness_violations
        )

    def summary(self) -> str:
        """Returns a human readable, multi-line diagnostics report."""
        lines = [
            f"status: {'pass' if self.passed else 'fail'}",
            f"span rank: {self.rank} / {self.expected_rank}",
        ]
        for setting, outcome, deviation in self.hermiticity_violations:
            lines.append(
                f"effect ({setting}, {outcome}) is not Hermitian "
                f"(deviation {deviation:.3e})"
            )
        for setting, outcome, eigenvalue in self.psd_violations:
            lines.append(
                f"effect ({setting}, {outcome}) has eigenvalue "
                f"{eigenvalue:.3e}"
            )
        for setting, deviation in self.completeness_violations:
            lines.append(
                f"setting {setting} effects do not sum to identity "
                f"(deviation {deviation:.3e})"
            )
        return "\n".join(lines)


def _numerical_rank(singular_values: np.ndarray, dim: int) -> int:
    if singular_values.size == 0 or singular_values[0] == 0.0:
        return 0

    threshold = dim**2 * np.finfo(float).eps * singular_values[0]
    return int(np.count_nonzero(singular_values > threshold))


def build_pauli_scheme(num_qubits: int) -> MeasurementModel:
    """Builds the Pauli measurement scheme on ``num_qubits`` qubits.

    Settings are all words over ``XYZ`` in lexicographic order; bit ``j`` of
    the outcome index, counted from the most significant bit, is the result
    of qubit ``j`` with 0 meaning eigenvalue +1.

    Args:
        num_qubits (int): Number of qubits, between 1 and 6.

    Raises:
        ValueError: The number of qubits is out of range.

    Returns:
        MeasurementModel: The model with ``3**n`` settings and ``2**n``
            outcomes each.
    """
    if not 1 <= num_qubits <= MAX_PAULI_QUBITS:
        raise ValueError(
            f"the Pauli scheme supports 1 to {MAX_PAULI_QUBITS} qubits, "
            f"got {num_qubits}"
        )

    labels = [
        "".join(word)
        for word in itertools.product("XYZ", repeat=num_qubits)
    ]
    dim = 2**num_qubits
    effects = np.empty((len(labels), dim, dim, dim), dtype=complex)

    for setting, label in enumerate(labels):
        vectors = np.ones((1, 1), dtype=complex)
        for letter in label:
            vectors = np.kron(vectors, PAULI_EIGENVECTORS[letter])

        effects[setting] = np.einsum("ki,kj->kij", vectors, vectors.conj())

    return MeasurementModel(num_qubits, tuple(labels), effects, "pauli")


def build_design_matrix(model: MeasurementModel) -> DesignMatrix:
    """Builds the design matrix of a spanning model.

    Args:
        model (MeasurementModel): The measurement model.

    Raises:
        RankDeficientModelError: The effects do not span the Hermitian
            operator space.

    Returns:
        DesignMatrix: ``B`` with its pseudoinverse and row-space basis.
    """
    matrix = model.coordinate_matrix
    dim = model.dim
    u, sigma, vh = scipy.linalg.svd(matrix, full_matrices=False)
    rank = _numerical_rank(sigma, dim)

    if rank < dim**2:
        raise RankDeficientModelError(rank, dim**2)

    pinv = (vh[:rank].T / sigma[:rank]) @ u[:, :rank].T
    logger.debug(
        "design matrix %dx%d, condition number %.3e",
        matrix.shape[0],
        matrix.shape[1],
        sigma[0] / sigma[rank - 1],
    )

    return DesignMatrix(
        matrix=matrix,
        pinv=pinv,
        rank=rank,
        dim=dim,
        shape=model.shape,
        row_basis=vh[:rank].copy(),
    )


def predict_probs(model: MeasurementModel, state: np.ndarray) -> np.ndarray:
    """Computes the table ``Re tr(state M_k^s)``.

    Positivity of ``state`` is not required, so the same function serves
    the relaxed model of Hermitian operators.

    Args:
        model (MeasurementModel): The measurement model.
        state (np.ndarray): A trace-one Hermitian ``d x d`` matrix.

    Raises:
        DimensionMismatchError: The state has the wrong shape.

    Returns:
        np.ndarray: Real array of shape ``(S, K)``.
    """
    state = np.asarray(state)
    if state.shape != (model.dim, model.dim):
        raise DimensionMismatchError(model.dim, state.shape)

    return np.einsum("skij,ji->sk", model.effects, state).real


def validate_model(model: MeasurementModel) -> ModelDiagnostics:
    """Checks hermiticity, positivity, completeness and span of a model."""
    identity = np.eye(model.dim)
    hermiticity: list[tuple[int, int, float]] = []
    positivity: list[tuple[int, int, float]] = []
    completeness: list[tuple[int, float]] = []

    adjoint_gap = np.abs(
        model.effects - np.conj(np.swapaxes(model.effects, -1, -2))
    ).max(axis=(-1, -2))
    smallest = np.linalg.eigvalsh(model.effects)[..., 0]

    for setting, outcome in np.ndindex(*model.shape):
        if adjoint_gap[setting, outcome] > EFFECT_TOLERANCE:
            hermiticity.append(
                (setting, outcome, float(adjoint_gap[setting, outcome]))
            )
        if smallest[setting, outcome] < -EFFECT_TOLERANCE:
            positivity.append(
                (setting, outcome, float(smallest[setting, outcome]))
            )

    for setting in range(model.num_settings):
        deviation = np.abs(model.effects[setting].sum(axis=0) - identity)
        if deviation.max() > EFFECT_TOLERANCE:
            completeness.append((setting, float(deviation.max())))

    sigma = scipy.linalg.svdvals(model.coordinate_matrix)
    diagnostics = ModelDiagnostics(
        rank=_numerical_rank(sigma, model.dim),
        expected_rank=model.dim**2,
        hermiticity_violations=hermiticity,
        psd_violations=positivity,
        completeness_violations=completeness,
    )

    if not diagnostics.passed:
        logger.warning("model validation failed:\n%s", diagnostics.summary())

    return diagnostics


def _encode_effects(effects: np.ndarray) -> list[Any]:
    return np.stack([effects.real, effects.imag], axis=-1).tolist()


def model_to_dict(model: MeasurementModel) -> dict[str, Any]:
    """Serializes a model into the ``tomocert-model/1`` document."""
    document: dict[str, Any] = {
        "format": MODEL_FORMAT,
        "qubits": model.num_qubits,
        "scheme": model.scheme,
        "setting_labels": list(model.setting_labels),
        "pauli_convention": {
            "+": "sigma eigenvalue +1 (bit 0)",
            "X": "(|0>+|1>)/sqrt2",
            "Y": "(|0>+i|1>)/sqrt2",
            "Z": "|0>",
        },
    }

    if model.scheme != "pauli":
        document["effects"] = _encode_effects(model.effects)

    return document


def model_from_dict(document: Any) -> MeasurementModel:
    """Parses and validates a ``tomocert-model/1`` document.

    Raises:
        ModelFileError: The document is malformed or the model fails
            validation.
    """
    if not isinstance(document, dict):
        raise ModelFileError("model document must be a JSON object")

    if document.get("format") != MODEL_FORMAT:
        raise ModelFileError(
            f"unsupported model format {document.get('format')!r}, "
            f"expected {MODEL_FORMAT!r}"
        )

    try:
        qubits = int(document["qubits"])
        scheme = str(document.get("scheme", "custom"))
        labels = tuple(str(label) for label in document["setting_labels"])

        match scheme:
            case "pauli":
                model = build_pauli_scheme(qubits)
                if labels != model.setting_labels:
                    raise ModelFileError(
                        "setting labels do not match the Pauli scheme"
                    )
                return model
            case "custom":
                raw = np.asarray(document["effects"], dtype=float)
                if raw.ndim != 5 or raw.shape[-1] != 2:
                    raise ModelFileError(
                        "effects must be nested [re, im] pairs of shape "
                        "(S, K, d, d, 2)"
                    )
                model = MeasurementModel(
                    qubits, labels, raw[..., 0] + 1j * raw[..., 1], "custom"
                )
            case _:
                raise ModelFileError(f"unknown scheme {scheme!r}")
    except (KeyError, TypeError, ValueError, ModelValidationError) as error:
        raise ModelFileError(f"malformed model document: {error}") from error

    diagnostics = validate_model(model)
    if not diagnostics.passed:
        raise ModelFileError(
            "model fails validation:\n" + diagnostics.summary()
        )

    return model


def save_model(model: MeasurementModel, sink: BinaryIO) -> None:
    """Writes a model file to a binary stream."""
    text = json.dumps(model_to_dict(model), indent=2, sort_keys=True)
    sink.write(text.encode("utf-8"))


def load_model(source: BinaryIO) -> MeasurementModel:
    """Reads a model file from a binary stream.

    Raises:
        ModelFileError: The stream is not a valid model file.
    """
    try:
        document = json.loads(source.read().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as error:
        raise ModelFileError(
            f"model file is not valid JSON: {error}"
        ) from error

    return model_from_dict(document)


def load_model_file(path: str) -> MeasurementModel:
    """Reads the model file at the given path."""
    with open(path, "rb") as model_file:
        return load_model(model_file)
