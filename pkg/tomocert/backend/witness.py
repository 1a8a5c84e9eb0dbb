"""
Witnesses for systematic errors.

A witness is a coefficient table ``w_k^s`` whose induced operator
``Z_w = sum w_k^s M_k^s`` is positive semidefinite, so that ``w . P >= 0``
for every distribution the model can produce. Its sample mean ``w . f`` on
data that did not take part in choosing ``w`` obeys a Hoeffding tail bound
``exp(-2 t^2 N_s / C_w^2)``.

Every witness splits orthogonally into a part in the row space of the design
matrix (testing positivity of the state) and a part in its kernel (testing
the linear identities between the effects).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, BinaryIO, Final

import numpy as np

from tomocert.backend import TomocertError
from tomocert.backend.data import FrequencyTable
from tomocert.backend.measmodel import (
    DesignMatrix,
    TableShapeError,
    hermitian_basis_coordinates,
)
from tomocert.backend.reconstruct import HermitianEstimate, linear_inversion

logger = logging.getLogger(__name__)

WITNESS_FORMAT: Final[str] = "tomocert-witness/1"
PSD_TOLERANCE: Final[float] = 1e-9
PHASE_TOLERANCE: Final[float] = 1e-12


class WitnessKind(Enum):
    """Which linear constraint of the model a witness tests"""

    POSITIVITY = "positivity"
    KERNEL = "kernel"
    MIXED = "mixed"


@dataclass(eq=False)
class NonPsdTargetError(TomocertError):
    """The target operator of a positivity witness is not PSD"""

    smallest_eigenvalue: float

    def __str__(self) -> str:
        return (
            "positivity witnesses need a positive semidefinite target, "
            f"smallest eigenvalue is {self.smallest_eigenvalue:.3e}"
        )


class OutsideSpanError(TomocertError):
    """The target operator is not a combination of the effects"""

    pass


class ConstantWitnessError(TomocertError):
    """A witness with zero Hoeffding constant took a negative value"""

    pass


class WitnessFileError(TomocertError):
    """The witness file is malformed"""

    pass


def hoeffding_constant(coeffs: np.ndarray) -> float:
    """Computes ``C_w^2 = sum_s (max_k w_k^s - min_k w_k^s)^2``."""
    coeffs = np.asarray(coeffs, dtype=float)
    ranges = coeffs.max(axis=1) - coeffs.min(axis=1)
    return float(np.sum(ranges**2))


@dataclass(frozen=True, eq=False)
class Witness:
    """A coefficient table with its induced operator and constant."""

    coeffs: np.ndarray
    induced_operator: np.ndarray
    kind: WitnessKind
    hoeffding_constant: float = field(init=False)
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        coeffs = np.array(self.coeffs, dtype=float)
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(
            self, "hoeffding_constant", hoeffding_constant(coeffs)
        )

    @staticmethod
    def from_coeffs(
        coeffs: np.ndarray,
        design: DesignMatrix,
        kind: WitnessKind = WitnessKind.MIXED,
        provenance: dict[str, Any] | None = None,
    ) -> Witness:
        """Wraps a raw coefficient table, computing ``Z_w``.

        Raises:
            TableShapeError: The table does not match the design.
        """
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != design.shape:
            raise TableShapeError(design.shape, coeffs.shape)

        return Witness(
            coeffs,
            design.induced_operator(coeffs),
            kind,
            provenance={} if provenance is None else dict(provenance),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": WITNESS_FORMAT,
            "kind": self.kind.value,
            "coeffs": self.coeffs.tolist(),
            "hoeffding_constant": self.hoeffding_constant,
            "provenance": self.provenance,
        }


@dataclass(frozen=True)
class WitnessTestResult:
    """The outcome of evaluating a witness on independent frequencies."""

    value: float
    hoeffding_constant: float
    shots: int
    alpha: float
    t_alpha: float
    """Violation needed for significance at level ``alpha``"""
    p_bound: float

    @property
    def significant(self) -> bool:
        return self.p_bound <= self.alpha

    def to_dict(self) -> dict[str, Any]:
        return {
            "value": self.value,
            "hoeffding_constant": self.hoeffding_constant,
            "shots": self.shots,
            "alpha": self.alpha,
            "t_alpha": self.t_alpha,
            "p_bound": self.p_bound,
        }


def hoeffding_bound(t: float, constant: float, shots: int) -> float:
    """Computes ``min(1, exp(-2 t^2 N_s / C_w^2))`` for ``t > 0``."""
    if constant == 0.0:
        return 0.0 if t > 0 else 1.0
    return min(1.0, math.exp(-2.0 * t**2 * shots / constant))


def significance_threshold(alpha: float, constant: float, shots: int) -> float:
    """Computes ``t_alpha = sqrt(-C_w^2 ln(alpha) / (2 N_s))``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return math.sqrt(-constant * math.log(alpha) / (2.0 * shots))


def _phase_fixed(vector: np.ndarray) -> np.ndarray:
    # first component above tolerance made real and positive
    leading = np.flatnonzero(np.abs(vector) > PHASE_TOLERANCE)
    if leading.size == 0:
        return vector
    pivot = vector[leading[0]]
    return vector * (abs(pivot) / pivot)


def build_positivity_witness(
    target: np.ndarray, design: DesignMatrix
) -> Witness:
    """Builds the minimum-norm witness ``w_P`` with ``Z_w = target``.

    The witness is ``pinv(B)`` applied to the coordinates of the target, the
    unique solution orthogonal to the kernel of ``B``.

    Args:
        target (np.ndarray): A positive semidefinite ``d x d`` matrix.
        design (DesignMatrix): Design matrix of the model.

    Raises:
        NonPsdTargetError: The target has a negative eigenvalue.
        OutsideSpanError: The effects cannot reproduce the target.

    Returns:
        Witness: The positivity witness.
    """
    target = np.asarray(target, dtype=complex)
    if target.shape != (design.dim, design.dim):
        raise TableShapeError((design.dim, design.dim), target.shape)

    if np.abs(target - target.conj().T).max() > PSD_TOLERANCE:
        raise NonPsdTargetError(math.nan)

    smallest = float(np.linalg.eigvalsh(target)[0]) if target.size else 0.0
    if smallest < -PSD_TOLERANCE:
        raise NonPsdTargetError(smallest)

    coordinates = hermitian_basis_coordinates(target)
    coeffs = design.pinv @ coordinates

    if np.linalg.norm(design.matrix @ coeffs - coordinates) > 1e-9:
        raise OutsideSpanError("the target lies outside the span of effects")

    return Witness(
        coeffs.reshape(design.shape),
        0.5 * (target + target.conj().T),
        WitnessKind.POSITIVITY,
    )


def positivity_witness_for_state(
    psi: np.ndarray, design: DesignMatrix
) -> Witness:
    """Builds ``w_P`` for the projector onto a state vector.

    Its value on frequencies ``f`` equals ``<psi| rho_ls(f) |psi>`` for the
    least-squares reconstruction of ``f``.
    """
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    psi = psi / np.linalg.norm(psi)
    return build_positivity_witness(np.outer(psi, psi.conj()), design)


def positivity_witness_from_data(
    first_half: FrequencyTable, design: DesignMatrix
) -> Witness:
    """Builds ``w_P`` from the eigenvector of the smallest eigenvalue of
    the least-squares reconstruction of ``first_half``.
    """
    rho_ls = linear_inversion(first_half, design)
    _, vectors = np.linalg.eigh(rho_ls.matrix)
    psi = _phase_fixed(vectors[:, 0])

    if rho_ls.eigenvalues[0] >= 0.0:
        logger.info(
            "least-squares estimate is positive (smallest eigenvalue "
            "%.3e); the positivity witness is still evaluated",
            rho_ls.eigenvalues[0],
        )

    witness = positivity_witness_for_state(psi, design)
    return Witness(
        witness.coeffs,
        witness.induced_operator,
        WitnessKind.POSITIVITY,
        provenance={
            "recipe": "smallest_eigenvector",
            "smallest_eigenvalue": float(rho_ls.eigenvalues[0]),
        },
    )


def build_kernel_witness(
    first_half: FrequencyTable,
    design: DesignMatrix,
    rho_ls: HermitianEstimate,
) -> Witness:
    """Builds ``w_L``, the kernel part of ``tr(rho_ls M_k^s) - f_1``.

    ``w_L . f_1`` is minus the squared norm of the kernel part of ``f_1``,
    the most negative value any unit-scaled kernel witness takes on the
    first half.

    Args:
        first_half (FrequencyTable): Frequencies the witness is fit on.
        design (DesignMatrix): Design matrix of the model.
        rho_ls (HermitianEstimate): Least-squares estimate of
            ``first_half``.

    Returns:
        Witness: The kernel witness; ``Z_w = 0``.
    """
    if first_half.shape != design.shape:
        raise TableShapeError(design.shape, first_half.shape)

    residual = design.predict(rho_ls.matrix) - first_half.freqs
    coeffs = design.kernel_projection(residual)

    return Witness(
        coeffs,
        np.zeros((design.dim, design.dim), dtype=complex),
        WitnessKind.KERNEL,
        provenance={"recipe": "least_squares_residual"},
    )


def decompose_witness(
    witness: Witness | np.ndarray, design: DesignMatrix
) -> tuple[np.ndarray, np.ndarray]:
    """Splits a witness into its row-space and kernel parts.

    Returns:
        tuple[np.ndarray, np.ndarray]: ``(w_P, w_L)`` with ``w = w_P + w_L``
            and ``w_P . w_L = 0``.
    """
    match witness:
        case Witness():
            coeffs = witness.coeffs
        case _:
            coeffs = np.asarray(witness, dtype=float)

    if coeffs.shape != design.shape:
        raise TableShapeError(design.shape, coeffs.shape)

    positivity = design.range_projection(coeffs)
    return positivity, coeffs - positivity


def witness_test(
    witness: Witness,
    second_half: FrequencyTable,
    shots: int,
    alpha: float,
) -> WitnessTestResult:
    """Evaluates a witness on frequencies it was not chosen from.

    Args:
        witness (Witness): The witness.
        second_half (FrequencyTable): Independent frequencies.
        shots (int): ``N_s`` behind ``second_half``.
        alpha (float): Significance level in ``(0, 1)``.

    Raises:
        ConstantWitnessError: ``C_w^2 = 0`` and the value is negative.
        TableShapeError: The frequencies do not match the witness.

    Returns:
        WitnessTestResult: The value ``w . f``, ``t_alpha`` and the p-value
            bound.
    """
    if second_half.shape != witness.coeffs.shape:
        raise TableShapeError(witness.coeffs.shape, second_half.shape)
    if shots < 1:
        raise ValueError(f"shots must be positive, got {shots}")

    value = float(np.sum(witness.coeffs * second_half.freqs))
    constant = witness.hoeffding_constant
    threshold = significance_threshold(alpha, constant, shots)

    if value >= 0.0:
        p_bound = 1.0
    elif constant == 0.0:
        raise ConstantWitnessError(
            f"a witness constant on every setting took value {value:.3e}"
        )
    else:
        p_bound = hoeffding_bound(-value, constant, shots)

    logger.debug(
        "witness value %.6g, C^2 = %.6g, N_s = %d, p <= %.6g",
        value,
        constant,
        shots,
        p_bound,
    )

    return WitnessTestResult(value, constant, shots, alpha, threshold, p_bound)


def witness_from_dict(document: Any, design: DesignMatrix) -> Witness:
    """Parses a ``tomocert-witness/1`` document.

    Raises:
        WitnessFileError: The document is malformed.
    """
    if not isinstance(document, dict):
        raise WitnessFileError("witness document must be a JSON object")
    if document.get("format") != WITNESS_FORMAT:
        raise WitnessFileError(
            f"unsupported witness format {document.get('format')!r}"
        )

    try:
        coeffs = np.asarray(document["coeffs"], dtype=float)
        kind = WitnessKind(document.get("kind", "mixed"))
        provenance = dict(document.get("provenance", {}))
    except (KeyError, TypeError, ValueError) as error:
        raise WitnessFileError(f"malformed witness: {error}") from error

    if coeffs.shape != design.shape:
        raise WitnessFileError(
            f"witness has shape {coeffs.shape}, the model needs "
            f"{design.shape}"
        )

    witness = Witness.from_coeffs(coeffs, design, kind, provenance)
    check_witness(witness, design)
    return witness


def check_witness(witness: Witness, design: DesignMatrix) -> None:
    """Checks that a witness is nonnegative on every quantum prediction.

    ``Z_w`` must be positive semidefinite for any kind. A positivity
    witness must also have no kernel part and a kernel witness no row-space
    part.

    Raises:
        WitnessFileError: One of the conditions fails.
    """
    smallest = float(np.linalg.eigvalsh(witness.induced_operator)[0])
    if smallest < -PSD_TOLERANCE:
        raise WitnessFileError(
            f"witness operator has eigenvalue {smallest:.3e}; its value is "
            "not nonnegative under the model"
        )

    match witness.kind:
        case WitnessKind.POSITIVITY:
            stray = np.linalg.norm(design.kernel_projection(witness.coeffs))
            if stray > PSD_TOLERANCE:
                raise WitnessFileError(
                    f"positivity witness has a kernel part of norm "
                    f"{stray:.3e}"
                )
        case WitnessKind.KERNEL:
            stray = np.linalg.norm(design.matrix @ witness.coeffs.reshape(-1))
            if stray > PSD_TOLERANCE:
                raise WitnessFileError(
                    f"kernel witness has a row-space part of norm "
                    f"{stray:.3e}"
                )
        case _:
            pass


def save_witness(witness: Witness, sink: BinaryIO) -> None:
    """Writes a witness file to a binary stream."""
    text = json.dumps(witness.to_dict(), indent=2, sort_keys=True)
    sink.write(text.encode("utf-8"))


def load_witness(source: BinaryIO, design: DesignMatrix) -> Witness:
    """Reads a witness file from a binary stream."""
    try:
        document = json.loads(source.read().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as error:
        raise WitnessFileError(f"witness file is not JSON: {error}") from error

    return witness_from_dict(document, design)
