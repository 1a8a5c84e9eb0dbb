"""
Likelihood ratio test.

``lambda_qm`` and ``lambda_nqm`` are twice the log-likelihood gap between
the saturated model (every setting its own distribution, optimum at the
observed frequencies) and the best density matrix, respectively the best
trace-one Hermitian operator with non-negative predictions. Under an
error-free experiment ``lambda_nqm`` is asymptotically chi-square with
``Delta = (K - 1) S - (d^2 - 1)`` degrees of freedom, and the tail
probability is the regularized upper incomplete gamma function
``Q(Delta / 2, t / 2)``.
"""

from __future__ import annotations

import logging
import math
import sys
from dataclasses import dataclass
from typing import Any, Final, Optional

import numpy as np

from tomocert.backend import TomocertError
from tomocert.backend.data import CountData, frequencies
from tomocert.backend.measmodel import (
    MeasurementModel,
    TableShapeError,
    predict_probs,
)
from tomocert.backend.reconstruct import (
    ConvergenceError,
    MleOutcome,
    SolverOptions,
    mle_quantum,
    mle_relaxed,
    weighted_log_likelihood,
)

logger = logging.getLogger(__name__)

NOISE_TOLERANCE: Final[float] = 1e-6
"""Negative log-likelihood ratios above ``-NOISE_TOLERANCE`` are noise"""

_GAMMA_EPSILON: Final[float] = 1e-16
_GAMMA_MAX_ITERATIONS: Final[int] = 100000
_TINY: Final[float] = sys.float_info.min / sys.float_info.epsilon

# Lanczos approximation, g = 7, nine terms
_LANCZOS_G: Final[float] = 7.0
_LANCZOS_COEFFICIENTS: Final[tuple[float, ...]] = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)


class GammaDomainError(TomocertError):
    """The arguments lie outside the domain of the gamma functions"""

    pass


class DegenerateModelError(TomocertError):
    """The model has no dimension deficit but the statistic is positive"""

    pass


@dataclass(eq=False)
class InconsistentLikelihoodError(TomocertError):
    """A log-likelihood ratio is negative beyond solver noise"""

    name: str
    value: float

    def __str__(self) -> str:
        return (
            f"{self.name} = {self.value:.3e} is negative; the nested "
            "optimizations are inconsistent"
        )


@dataclass(frozen=True)
class LrtResult:
    """Log-likelihood ratios with the Wilks p-value.

    ``dimension_deficit`` and ``p_value`` are None for results of
    `lambda_ratios`, which computes the statistics only.
    """

    lambda_qm: float
    lambda_nqm: float
    quantum: MleOutcome
    relaxed: MleOutcome
    boundary_warning: bool
    """Some expected count under ``rho_ml`` is below 1/10"""
    dimension_deficit: Optional[int] = None
    p_value: Optional[float] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "lambda_qm": self.lambda_qm,
            "lambda_nqm": self.lambda_nqm,
            "delta": self.dimension_deficit,
            "p_value": self.p_value,
            "diagnostics": {
                "boundary_warning": self.boundary_warning,
                "mle_quantum": self.quantum.to_dict(),
                "mle_relaxed": self.relaxed.to_dict(),
            },
        }


def log_likelihood(probs: np.ndarray, counts: CountData) -> float:
    """Computes ``sum_{s,k} m_k^s ln p_k^s`` with ``0 ln 0 = 0``.

    Args:
        probs (np.ndarray): Table of probabilities of shape ``(S, K)``.
        counts (CountData): The observed counts.

    Raises:
        TableShapeError: The shapes differ.

    Returns:
        float: The log-likelihood; ``-inf`` when an observed outcome has
            probability zero.
    """
    probs = np.asarray(probs, dtype=float)
    if probs.shape != counts.shape:
        raise TableShapeError(counts.shape, probs.shape)

    return weighted_log_likelihood(probs, counts.counts)


def _clamped(name: str, value: float) -> float:
    if value >= 0.0:
        return value
    if value >= -NOISE_TOLERANCE:
        return 0.0
    raise InconsistentLikelihoodError(name, value)


def _require_converged(outcome: MleOutcome) -> None:
    if not outcome.converged:
        raise ConvergenceError(
            outcome.estimate.kind,
            outcome.iterations,
            outcome.optimality_residual,
        )


def _saturated_log_likelihood(counts: CountData) -> float:
    return log_likelihood(frequencies(counts).freqs, counts)


def lambda_nqm(
    counts: CountData,
    model: MeasurementModel,
    options: SolverOptions = SolverOptions(),
    start: Optional[np.ndarray] = None,
) -> tuple[float, MleOutcome]:
    """Computes ``lambda_nqm`` alone, solving the relaxed problem only.

    Raises:
        ConvergenceError: The relaxed maximization did not converge.

    Returns:
        tuple[float, MleOutcome]: The statistic and the relaxed optimum.
    """
    relaxed = mle_relaxed(counts, model, options, start)
    _require_converged(relaxed)

    gap = 2.0 * (_saturated_log_likelihood(counts) - relaxed.log_likelihood)
    return _clamped("lambda_nqm", gap), relaxed


def lambda_ratios(
    counts: CountData,
    model: MeasurementModel,
    options: SolverOptions = SolverOptions(),
) -> LrtResult:
    """Computes ``lambda_qm`` and ``lambda_nqm``.

    Raises:
        ConvergenceError: One of the maximizations did not converge.
        InconsistentLikelihoodError: A ratio is negative beyond noise.

    Returns:
        LrtResult: The statistics, without the p-value.
    """
    saturated = _saturated_log_likelihood(counts)

    quantum = mle_quantum(counts, model, options)
    _require_converged(quantum)
    relaxed = mle_relaxed(counts, model, options)
    _require_converged(relaxed)

    lambda_qm = _clamped(
        "lambda_qm", 2.0 * (saturated - quantum.log_likelihood)
    )
    relaxed_gap = _clamped(
        "lambda_nqm", 2.0 * (saturated - relaxed.log_likelihood)
    )

    if relaxed_gap > lambda_qm + NOISE_TOLERANCE:
        raise InconsistentLikelihoodError(
            "lambda_qm - lambda_nqm", lambda_qm - relaxed_gap
        )

    expected = predict_probs(model, quantum.estimate.matrix)
    boundary = bool(
        np.any(expected < 1.0 / (10.0 * counts.shots_per_setting))
    )
    if boundary:
        logger.warning(
            "the quantum optimum predicts outcomes with fewer than 0.1 "
            "expected counts; the chi-square limit may be inaccurate"
        )

    return LrtResult(lambda_qm, relaxed_gap, quantum, relaxed, boundary)


def dimension_deficit(model: MeasurementModel) -> int:
    """Computes ``Delta = (K - 1) S - (d^2 - 1)``.

    A non-positive deficit is returned as is, with a warning: such models
    leave no degrees of freedom to the test.
    """
    deficit = (model.num_outcomes - 1) * model.num_settings - (
        model.dim**2 - 1
    )

    if deficit <= 0:
        logger.warning(
            "model has dimension deficit %d; the likelihood ratio test is "
            "degenerate",
            deficit,
        )

    return deficit


def ln_gamma(value: float) -> float:
    """Natural logarithm of the gamma function for positive arguments."""
    if not value > 0.0:
        raise GammaDomainError(f"ln_gamma needs a positive argument: {value}")

    if value < 0.5:
        # reflection formula
        return math.log(math.pi / math.sin(math.pi * value)) - ln_gamma(
            1.0 - value
        )

    shifted = value - 1.0
    series = _LANCZOS_COEFFICIENTS[0]
    for index, coefficient in enumerate(_LANCZOS_COEFFICIENTS[1:], start=1):
        series += coefficient / (shifted + index)

    base = shifted + _LANCZOS_G + 0.5
    return (
        0.5 * math.log(2.0 * math.pi)
        + (shifted + 0.5) * math.log(base)
        - base
        + math.log(series)
    )


def _lower_series(shape: float, x: float, log_prefactor: float) -> float:
    term = 1.0 / shape
    total = term
    denominator = shape

    for _ in range(_GAMMA_MAX_ITERATIONS):
        denominator += 1.0
        term *= x / denominator
        total += term
        if abs(term) < abs(total) * _GAMMA_EPSILON:
            return total * math.exp(log_prefactor)

    raise GammaDomainError(f"series for P({shape}, {x}) did not converge")


def _upper_continued_fraction(
    shape: float, x: float, log_prefactor: float
) -> float:
    # modified Lentz evaluation
    b = x + 1.0 - shape
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d

    for index in range(1, _GAMMA_MAX_ITERATIONS):
        an = -index * (index - shape)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_EPSILON:
            return h * math.exp(log_prefactor)

    raise GammaDomainError(
        f"continued fraction for Q({shape}, {x}) did not converge"
    )


def gamma_q(shape: float, x: float) -> float:
    """The regularized upper incomplete gamma function ``Q(s, x)``.

    ``Q(s, x) = Gamma(s, x) / Gamma(s)``, evaluated by the power series of
    the lower function for ``x < s + 1`` and by a continued fraction
    otherwise.

    Args:
        shape (float): ``s > 0``.
        x (float): ``x >= 0``.

    Raises:
        GammaDomainError: The arguments are out of the domain.

    Returns:
        float: ``Q(s, x)`` in ``[0, 1]``.
    """
    if not (shape > 0.0 and math.isfinite(shape)):
        raise GammaDomainError(f"Q needs a positive shape, got {shape}")
    if not x >= 0.0:
        raise GammaDomainError(f"Q needs a non-negative argument, got {x}")

    if x == 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0

    log_prefactor = -x + shape * math.log(x) - ln_gamma(shape)

    if x < shape + 1.0:
        lower = _lower_series(shape, x, log_prefactor)
        return min(1.0, max(0.0, 1.0 - lower))

    if log_prefactor < -745.0:
        return 0.0

    upper = _upper_continued_fraction(shape, x, log_prefactor)
    return min(1.0, max(0.0, upper))


def wilks_pvalue(lambda_nqm: float, delta: int) -> float:
    """Computes the asymptotic p-value ``Q(delta / 2, lambda_nqm / 2)``.

    For ``delta <= 0`` the p-value is 1 when the statistic vanishes within
    solver noise.

    Raises:
        GammaDomainError: The statistic is negative.
        DegenerateModelError: ``delta <= 0`` and the statistic is positive.
    """
    if not lambda_nqm >= 0.0:
        raise GammaDomainError(f"statistic must be non-negative: {lambda_nqm}")

    if delta <= 0:
        if lambda_nqm <= NOISE_TOLERANCE:
            return 1.0
        raise DegenerateModelError(
            f"dimension deficit {delta} admits no positive statistic, got "
            f"lambda_nqm = {lambda_nqm:.6g}"
        )

    return gamma_q(delta / 2.0, lambda_nqm / 2.0)


def likelihood_ratio_test(
    counts: CountData,
    model: MeasurementModel,
    options: SolverOptions = SolverOptions(),
) -> LrtResult:
    """Runs the complete likelihood ratio test.

    Returns:
        LrtResult: Statistics, dimension deficit and Wilks p-value.
    """
    ratios = lambda_ratios(counts, model, options)
    delta = dimension_deficit(model)
    p_value = wilks_pvalue(ratios.lambda_nqm, delta)

    logger.info(
        "lambda_qm = %.6g, lambda_nqm = %.6g, delta = %d, p = %.6g",
        ratios.lambda_qm,
        ratios.lambda_nqm,
        delta,
        p_value,
    )

    return LrtResult(
        ratios.lambda_qm,
        ratios.lambda_nqm,
        ratios.quantum,
        ratios.relaxed,
        ratios.boundary_warning,
        delta,
        p_value,
    )
