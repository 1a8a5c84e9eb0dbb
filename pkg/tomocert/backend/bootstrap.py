"""
Parametric bootstrap of ``lambda_nqm``.

Synthetic data sets are drawn from the predictions of the quantum maximum
likelihood state with the shot count of the observed data. The effective
degrees of freedom ``Delta'`` are the ones whose chi-square median matches
the median of the bootstrap samples, and the calibrated p-value is
``Q(Delta' / 2, lambda_obs / 2)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Any, Final, Optional

import numpy as np

from tomocert.backend import TomocertError
from tomocert.backend.data import CountData
from tomocert.backend.lrt import (
    InconsistentLikelihoodError,
    gamma_q,
    lambda_nqm,
)
from tomocert.backend.measmodel import MeasurementModel, predict_probs
from tomocert.backend.observer import ReplicateDroppedError, ReplicateRunner
from tomocert.backend.reconstruct import (
    ConvergenceError,
    SolverOptions,
    mle_quantum,
)
from tomocert.backend.rng import check_seed, derive_seed, stream
from tomocert.backend.simulate import sample_counts

logger = logging.getLogger(__name__)

MIN_FIT_SAMPLES: Final[int] = 100
MAX_MISSING_FRACTION: Final[float] = 0.01
DELTA_LOWER: Final[float] = 1e-3
FIT_TOLERANCE: Final[float] = 1e-8

_RETRY_KEY: Final[int] = 1


class BootstrapError(TomocertError):
    """The bootstrap cannot produce a calibrated result"""

    pass


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    """Bootstrap samples of ``lambda_nqm``, calibrated or not.

    ``median``, ``delta_prime`` and ``p_star`` are filled by `calibrate`.
    """

    samples: tuple[float, ...]
    missing: int
    base_state: np.ndarray
    seed: int
    median: Optional[float] = None
    delta_prime: Optional[float] = None
    p_star: Optional[float] = None

    def to_dict(self, with_samples: bool = False) -> dict[str, Any]:
        document: dict[str, Any] = {
            "num_samples": len(self.samples),
            "missing": self.missing,
            "seed": self.seed,
            "median": self.median,
            "delta_prime": self.delta_prime,
            "p_star": self.p_star,
        }
        if with_samples:
            document["samples"] = list(self.samples)
        return document


def _perturbed_start(dim: int, seed: int) -> np.ndarray:
    generator = stream(seed, _RETRY_KEY)
    gaussian = generator.normal(size=(dim, dim)) + 1j * generator.normal(
        size=(dim, dim)
    )
    random_state = gaussian @ gaussian.conj().T
    random_state /= np.trace(random_state).real
    return 0.9 * np.eye(dim, dtype=complex) / dim + 0.1 * random_state


def _replicate_statistic(
    probs: np.ndarray,
    counts: CountData,
    model: MeasurementModel,
    options: SolverOptions,
    seed: int,
) -> float:
    replicate = sample_counts(
        probs,
        counts.shots_per_setting,
        seed,
        model.setting_labels,
        model.num_qubits,
    )

    try:
        return lambda_nqm(replicate, model, options)[0]
    except (ConvergenceError, InconsistentLikelihoodError) as error:
        logger.debug("retrying replicate with seed %d: %s", seed, error)

    try:
        start = _perturbed_start(model.dim, seed)
        return lambda_nqm(replicate, model, options, start)[0]
    except (ConvergenceError, InconsistentLikelihoodError) as error:
        raise ReplicateDroppedError(str(error)) from error


def run_bootstrap(
    counts: CountData,
    model: MeasurementModel,
    num_samples: int,
    seed: int,
    options: SolverOptions = SolverOptions(),
    runner: Optional[ReplicateRunner[float]] = None,
) -> BootstrapResult:
    """Samples ``lambda_nqm`` on data simulated from ``rho_ml``.

    Replicate ``b`` draws its counts with the seed derived from
    ``(seed, b)``, so the samples do not depend on the number of threads. A
    replicate whose relaxed solve fails is retried once from a perturbed
    start and dropped if it fails again.

    Args:
        counts (CountData): The observed counts.
        model (MeasurementModel): The measurement model.
        num_samples (int): Number of replicates, at least 1.
        seed (int): The bootstrap seed.
        options (SolverOptions): Solver tolerances.
        runner (ReplicateRunner): Runs the replicates; a fresh runner with
            the default thread count when omitted.

    Raises:
        BootstrapError: ``num_samples`` is not positive, the quantum
            maximization did not converge or more than 1% of the
            replicates were dropped.

    Returns:
        BootstrapResult: The samples in replicate order, uncalibrated.
    """
    check_seed(seed)
    if num_samples < 1:
        raise BootstrapError(f"need at least one sample, got {num_samples}")

    optimum = mle_quantum(counts, model, options)
    if not optimum.converged:
        raise BootstrapError(
            "the quantum maximum likelihood estimate did not converge "
            f"(residual {optimum.optimality_residual:.3e})"
        )

    base_state = optimum.estimate.matrix
    probs = predict_probs(model, base_state)

    if runner is None:
        runner = ReplicateRunner()

    results = runner.run(
        lambda index: _replicate_statistic(
            probs, counts, model, options, derive_seed(seed, index)
        ),
        num_samples,
    )

    samples = tuple(float(value) for value in results if value is not None)
    missing = num_samples - len(samples)

    if missing > 0:
        logger.warning("dropped %d of %d replicates", missing, num_samples)
    if missing > MAX_MISSING_FRACTION * num_samples:
        raise BootstrapError(
            f"{missing} of {num_samples} replicates failed to converge"
        )

    return BootstrapResult(samples, missing, base_state, seed)


def fit_delta_prime(
    samples: tuple[float, ...] | list[float] | np.ndarray,
    upper: Optional[float] = None,
    literal: bool = False,
) -> float:
    """Fits the effective degrees of freedom to the sample median.

    Solves ``Q(Delta' / 2, m / 2) = 1/2`` for ``Delta'`` by bisection, or
    ``Q(Delta' / 2, m) = 1/2`` when ``literal`` is set.

    Args:
        samples: At least 100 bootstrap samples.
        upper (Optional[float]): Upper end of the bracket, usually
            ``10 (K - 1) S``; grown until it brackets the root when omitted.
        literal (bool): Use ``m`` instead of ``m / 2`` as the argument.

    Raises:
        BootstrapError: Too few samples, or a non-positive median.

    Returns:
        float: ``Delta'``.
    """
    values = np.asarray(samples, dtype=float)
    if values.size < MIN_FIT_SAMPLES:
        raise BootstrapError(
            f"need at least {MIN_FIT_SAMPLES} samples, got {values.size}"
        )

    median = float(np.median(values))
    if not median > 0.0:
        raise BootstrapError(
            f"bootstrap median is {median}; the model is degenerate, use "
            "the dimension deficit check instead"
        )

    argument = median if literal else median / 2.0

    def excess(delta: float) -> float:
        return gamma_q(delta / 2.0, argument) - 0.5

    lower = DELTA_LOWER
    if excess(lower) >= 0.0:
        raise BootstrapError(
            f"median {median:.3e} is below every admissible Delta'"
        )

    if upper is None:
        upper = max(10.0, 4.0 * argument)
        while excess(upper) < 0.0:
            upper *= 2.0
    elif excess(upper) < 0.0:
        raise BootstrapError(
            f"median {median:.6g} needs Delta' above {upper:.6g}"
        )

    # Q(s, x) grows with s
    while True:
        middle = 0.5 * (lower + upper)
        value = excess(middle)
        if abs(value) <= FIT_TOLERANCE or upper - lower < 1e-12 * upper:
            return middle
        if value < 0.0:
            lower = middle
        else:
            upper = middle


def bootstrap_pvalue(lambda_obs: float, delta_prime: float) -> float:
    """Computes ``Q(delta_prime / 2, lambda_obs / 2)``."""
    return gamma_q(delta_prime / 2.0, lambda_obs / 2.0)


def calibrate(
    result: BootstrapResult,
    lambda_obs: float,
    model: Optional[MeasurementModel] = None,
    literal: bool = False,
) -> BootstrapResult:
    """Completes a bootstrap result with ``m``, ``Delta'`` and ``p*``.

    With a model the bisection bracket ends at ``10 (K - 1) S``.
    """
    upper = None
    if model is not None:
        upper = 10.0 * (model.num_outcomes - 1) * model.num_settings

    delta_prime = fit_delta_prime(result.samples, upper, literal)
    p_star = bootstrap_pvalue(lambda_obs, delta_prime)

    logger.info(
        "bootstrap median %.6g, Delta' = %.6g, p* = %.6g",
        float(np.median(result.samples)),
        delta_prime,
        p_star,
    )

    return replace(
        result,
        median=float(np.median(result.samples)),
        delta_prime=delta_prime,
        p_star=p_star,
    )
