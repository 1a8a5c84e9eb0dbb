"""
State reconstruction: least-squares linear inversion and the two maximum
likelihood estimators (over density matrices, and over trace-one Hermitian
operators whose predicted probabilities are non-negative).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Final, Optional

import numpy as np
import scipy.linalg

from tomocert.backend import TomocertError
from tomocert.backend.data import CountData, FrequencyTable
from tomocert.backend.measmodel import (
    DesignMatrix,
    MeasurementModel,
    TableShapeError,
    from_hermitian_coordinates,
    hermitian_basis_coordinates,
)

logger = logging.getLogger(__name__)

HERMITIAN_TOLERANCE: Final[float] = 1e-10
POSITIVITY_TOLERANCE: Final[float] = 1e-8
# dense Cholesky solves above this size get one refinement step
_REFINEMENT_DIMENSION: Final[int] = 255

Observations = CountData | FrequencyTable


class EstimateKind(Enum):
    """The estimator that produced a `HermitianEstimate`"""

    LINEAR_INVERSION = "linear_inversion"
    MLE_QUANTUM = "mle_quantum"
    MLE_RELAXED = "mle_relaxed"


class EstimateError(TomocertError):
    """The matrix violates the invariants of its estimate kind"""

    pass


@dataclass(eq=False)
class ConvergenceError(TomocertError):
    """A likelihood maximization did not converge"""

    kind: EstimateKind
    iterations: int
    residual: float

    def __str__(self) -> str:
        return (
            f"{self.kind.value} did not converge after {self.iterations} "
            f"iterations (residual {self.residual:.3e})"
        )


@dataclass(eq=False)
class UnreachableOutcomeError(TomocertError):
    """An observed outcome has probability zero under every state"""

    setting: int
    outcome: int

    def __str__(self) -> str:
        return (
            f"outcome {self.outcome} of setting {self.setting} was observed "
            "but its effect is zero"
        )


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances and iteration limits of both likelihood maximizers."""

    tolerance: float = 1e-9
    """Bound on ``||R(rho) rho - rho||`` certifying the quantum optimum"""
    max_iterations: int = 50000
    newton_tolerance: float = 1e-10
    """Bound on half the squared Newton decrement of the relaxed solve"""
    max_newton_iterations: int = 200
    """Newton steps allowed per barrier weight"""
    barrier_start: float = 1.0
    barrier_factor: float = 0.1
    barrier_tolerance: float = 1e-9

    def __post_init__(self) -> None:
        if self.tolerance <= 0 or self.newton_tolerance <= 0:
            raise ValueError("solver tolerances must be positive")
        if self.max_iterations < 1 or self.max_newton_iterations < 1:
            raise ValueError("iteration limits must be positive")
        if not 0 < self.barrier_factor < 1:
            raise ValueError("barrier factor must lie in (0, 1)")
        if self.barrier_start <= 0 or self.barrier_tolerance <= 0:
            raise ValueError("barrier weights must be positive")


@dataclass(frozen=True, eq=False)
class HermitianEstimate:
    """A trace-one Hermitian matrix produced by one of the estimators."""

    matrix: np.ndarray
    kind: EstimateKind
    eigenvalues: np.ndarray = field(init=False, repr=False)
    """Eigenvalues in ascending order"""

    def __post_init__(self) -> None:
        matrix = np.array(self.matrix, dtype=complex)

        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise EstimateError(f"estimate must be square, got {matrix.shape}")

        asymmetry = np.abs(matrix - matrix.conj().T).max()
        if asymmetry > HERMITIAN_TOLERANCE:
            raise EstimateError(f"estimate is not Hermitian ({asymmetry:.3e})")

        trace = np.trace(matrix).real
        if abs(trace - 1.0) > HERMITIAN_TOLERANCE:
            raise EstimateError(f"estimate has trace {trace:.12f}")

        matrix = 0.5 * (matrix + matrix.conj().T)
        eigenvalues = np.linalg.eigvalsh(matrix)

        if (
            self.kind is EstimateKind.MLE_QUANTUM
            and eigenvalues[0] < -POSITIVITY_TOLERANCE
        ):
            raise EstimateError(
                f"quantum estimate has eigenvalue {eigenvalues[0]:.3e}"
            )

        matrix.setflags(write=False)
        eigenvalues.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "eigenvalues", eigenvalues)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def to_dict(self) -> dict[str, Any]:
        """Serializes the estimate; the matrix as nested [re, im] pairs."""
        pairs = np.stack([self.matrix.real, self.matrix.imag], axis=-1)
        return {
            "kind": self.kind.value,
            "matrix": pairs.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
        }


@dataclass(frozen=True)
class MleOutcome:
    """The result of a likelihood maximization."""

    estimate: HermitianEstimate
    log_likelihood: float
    """Natural log, counts weighted, multinomial prefactor omitted"""
    iterations: int
    converged: bool
    optimality_residual: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.estimate.kind.value,
            "log_likelihood": self.log_likelihood,
            "iterations": self.iterations,
            "converged": self.converged,
            "optimality_residual": self.optimality_residual,
        }


def weighted_log_likelihood(probs: np.ndarray, weights: np.ndarray) -> float:
    """Computes ``sum w ln p`` with ``0 ln 0 = 0``.

    Returns:
        float: The log-likelihood, or ``-inf`` when a positive weight meets
            a non-positive probability.
    """
    probs = np.asarray(probs, dtype=float).reshape(-1)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    observed = weights > 0

    if np.any(probs[observed] <= 0.0):
        return -math.inf

    return float(np.dot(weights[observed], np.log(probs[observed])))


def _observation_weights(
    observations: Observations, model: MeasurementModel
) -> np.ndarray:
    match observations:
        case CountData():
            weights = observations.counts.astype(float)
        case FrequencyTable():
            weights = np.array(observations.freqs, dtype=float)

    if weights.shape != model.shape:
        raise TableShapeError(model.shape, weights.shape)

    return weights


def _check_reachable(weights: np.ndarray, model: MeasurementModel) -> None:
    magnitude = np.abs(model.coordinate_matrix).max(axis=0)
    unreachable = (weights.reshape(-1) > 0) & (magnitude == 0.0)

    if np.any(unreachable):
        index = int(np.flatnonzero(unreachable)[0])
        setting, outcome = divmod(index, model.num_outcomes)
        raise UnreachableOutcomeError(setting, outcome)


def _normalized(matrix: np.ndarray) -> np.ndarray:
    matrix = 0.5 * (matrix + matrix.conj().T)
    return matrix / np.trace(matrix).real


def linear_inversion(
    freqs: FrequencyTable, design: DesignMatrix
) -> HermitianEstimate:
    """Least-squares linear inversion with the trace fixed to one.

    Minimizes ``sum_{s,k} [f_k^s - tr(rho M_k^s)]^2`` over trace-one
    Hermitian ``rho``. The result may have negative eigenvalues.

    Args:
        freqs (FrequencyTable): Observed frequencies.
        design (DesignMatrix): Design matrix of the model.

    Raises:
        TableShapeError: The table does not match the design.

    Returns:
        HermitianEstimate: The estimate ``rho_ls``.
    """
    if freqs.shape != design.shape:
        raise TableShapeError(design.shape, freqs.shape)

    identity_coordinate = 1.0 / np.sqrt(design.dim)
    offset = design.matrix[0] * identity_coordinate
    traceless = design.traceless_pinv @ (freqs.flat - offset)

    coordinates = np.concatenate([[identity_coordinate], traceless])
    matrix = from_hermitian_coordinates(coordinates)

    return HermitianEstimate(matrix, EstimateKind.LINEAR_INVERSION)


def mle_quantum(
    observations: Observations,
    model: MeasurementModel,
    options: SolverOptions = SolverOptions(),
    start: Optional[np.ndarray] = None,
) -> MleOutcome:
    """Maximizes the likelihood over density matrices.

    Runs the diluted ``R rho R`` iteration: each step moves from ``rho``
    towards ``R rho R / tr(R rho R)`` with the step length halved until
    the likelihood does not decrease, where
    ``R = sum_{s,k} m_k^s / (N_s S tr(rho M_k^s)) M_k^s`` over the
    observed outcomes. Frequency tables are accepted as pseudo-counts.

    Args:
        observations (CountData | FrequencyTable): The data.
        model (MeasurementModel): The measurement model.
        options (SolverOptions): Solver tolerances.
        start (Optional[np.ndarray]): A full-rank density matrix to start
            from; the maximally mixed state by default.

    Raises:
        UnreachableOutcomeError: An observed outcome has a zero effect.

    Returns:
        MleOutcome: The optimum; ``converged`` is False when the residual
            did not reach the tolerance within the iteration limit.
    """
    weights = _observation_weights(observations, model)
    _check_reachable(weights, model)

    design = model.coordinate_matrix
    row_totals = weights.sum(axis=1, keepdims=True)
    scale = (weights / (row_totals * model.num_settings)).reshape(-1)
    observed = scale > 0
    observed_design = design[:, observed]

    rho = (
        np.eye(model.dim, dtype=complex) / model.dim
        if start is None
        else _normalized(np.asarray(start, dtype=complex))
    )
    probs = design.T @ hermitian_basis_coordinates(rho)
    likelihood = weighted_log_likelihood(probs, weights)

    residual = math.inf
    converged = False
    iteration = 0

    for iteration in range(options.max_iterations + 1):
        ratios = scale[observed] / probs[observed]
        r_operator = from_hermitian_coordinates(observed_design @ ratios)
        residual = float(np.linalg.norm(r_operator @ rho - rho))

        if residual <= options.tolerance:
            converged = True
            break
        if iteration == options.max_iterations:
            break

        candidate = _normalized(r_operator @ rho @ r_operator)
        step = 1.0

        while True:
            trial = step * candidate + (1.0 - step) * rho
            trial_probs = design.T @ hermitian_basis_coordinates(trial)
            trial_likelihood = weighted_log_likelihood(trial_probs, weights)

            slack = 1e-12 * max(1.0, abs(likelihood))
            if trial_likelihood >= likelihood - slack:
                break

            step *= 0.5
            if step < 1e-12:
                break

        if step < 1e-12:
            logger.debug("R rho R step stalled at iteration %d", iteration)
            break

        rho, probs, likelihood = trial, trial_probs, trial_likelihood

        if iteration % 1000 == 0:
            logger.debug(
                "iteration %d: log L = %.12g, residual %.3e",
                iteration,
                likelihood,
                residual,
            )

    if not converged:
        logger.warning(
            "quantum MLE stopped after %d iterations with residual %.3e",
            iteration,
            residual,
        )

    return MleOutcome(
        estimate=HermitianEstimate(_normalized(rho), EstimateKind.MLE_QUANTUM),
        log_likelihood=likelihood,
        iterations=iteration,
        converged=converged,
        optimality_residual=residual,
    )


def _solve_positive(hessian: np.ndarray, gradient: np.ndarray) -> np.ndarray:
    factor = scipy.linalg.cho_factor(hessian)
    step = scipy.linalg.cho_solve(factor, gradient)

    if hessian.shape[0] > _REFINEMENT_DIMENSION:
        step += scipy.linalg.cho_solve(factor, gradient - hessian @ step)

    return step


def mle_relaxed(
    observations: Observations,
    model: MeasurementModel,
    options: SolverOptions = SolverOptions(),
    start: Optional[np.ndarray] = None,
) -> MleOutcome:
    """Maximizes the likelihood over trace-one Hermitian operators ``X``
    with ``tr(X M_k^s) >= 0`` for every effect.

    The traceless coordinates of ``X`` are optimized by damped Newton steps
    with exact Hessian. Outcomes that were observed keep their probability
    positive through the objective itself; the constraints of unobserved
    outcomes get a log barrier whose weight shrinks by ``barrier_factor``
    after every centering until it reaches ``barrier_tolerance``.

    Args:
        observations (CountData | FrequencyTable): The data.
        model (MeasurementModel): The measurement model.
        options (SolverOptions): Solver tolerances.
        start (Optional[np.ndarray]): A strictly feasible trace-one
            Hermitian matrix to start from; ``I / d`` by default.

    Raises:
        EstimateError: The optimum predicts a negative probability.

    Returns:
        MleOutcome: The optimum ``X_ml``; ``optimality_residual`` is half
            the squared Newton decrement of the last centering.
    """
    weights = _observation_weights(observations, model).reshape(-1)
    _check_reachable(weights, model)

    design = model.coordinate_matrix
    identity_coordinate = 1.0 / np.sqrt(model.dim)
    offset = design[0] * identity_coordinate
    tangent = design[1:].T

    nonzero = np.abs(design).max(axis=0) > 0.0
    barriered = (weights == 0) & nonzero
    constrained = (weights > 0) | barriered

    x = np.zeros(tangent.shape[1])
    if start is not None:
        coordinates = hermitian_basis_coordinates(
            _normalized(np.asarray(start, dtype=complex))
        )
        if np.all((offset + tangent @ coordinates[1:])[constrained] > 0):
            x = coordinates[1:]
        else:
            logger.warning("relaxed MLE start is infeasible, using I/d")

    barrier = options.barrier_start if np.any(barriered) else 0.0
    decrement = math.inf
    total_steps = 0
    converged = False

    def objective(probs: np.ndarray, weight: float) -> float:
        if np.any(probs[constrained] <= 0.0):
            return -math.inf
        value = float(np.dot(weights[weights > 0], np.log(probs[weights > 0])))
        if weight > 0.0:
            value += weight * float(np.sum(np.log(probs[barriered])))
        return value

    while True:
        effective = weights + barrier * barriered
        centered = False

        for _ in range(options.max_newton_iterations):
            probs = offset + tangent @ x
            safe = np.where(constrained, probs, 1.0)
            gradient = tangent.T @ (effective / safe)
            curvature = effective / safe**2
            hessian = tangent.T @ (curvature[:, None] * tangent)
            step = _solve_positive(hessian, gradient)
            decrement = float(gradient @ step) / 2.0

            if decrement <= options.newton_tolerance:
                centered = True
                break

            total_steps += 1
            direction = tangent @ step
            length = 1.0
            while np.any((probs + length * direction)[constrained] <= 0.0):
                length *= 0.5

            current = objective(probs, barrier)
            slack = 1e-13 * max(1.0, abs(current))
            while (
                objective(probs + length * direction, barrier)
                < current + 0.5 * length * decrement - slack
                and length > 1e-14
            ):
                length *= 0.5

            x = x + length * step

        if not centered:
            logger.warning(
                "relaxed MLE centering failed at barrier weight %.3e",
                barrier,
            )
            break

        if barrier <= options.barrier_tolerance:
            converged = True
            break

        barrier *= options.barrier_factor
        logger.debug("barrier weight lowered to %.3e", barrier)

    probs = offset + tangent @ x
    if probs.min() < -POSITIVITY_TOLERANCE:
        raise EstimateError(
            f"relaxed estimate predicts probability {probs.min():.3e}"
        )
    matrix = from_hermitian_coordinates(
        np.concatenate([[identity_coordinate], x])
    )
    likelihood = weighted_log_likelihood(probs, weights)

    return MleOutcome(
        estimate=HermitianEstimate(matrix, EstimateKind.MLE_RELAXED),
        log_likelihood=likelihood,
        iterations=total_steps,
        converged=converged,
        optimality_residual=decrement,
    )
