"""
Tests for the likelihood ratio test and the incomplete gamma function.
"""

import dataclasses
import math

import numpy as np
import pytest
from scipy import integrate, special

from conftest import random_density
from tomocert.backend import lrt
from tomocert.backend.data import CountData
from tomocert.backend.lrt import (
    DegenerateModelError,
    GammaDomainError,
    InconsistentLikelihoodError,
    dimension_deficit,
    gamma_q,
    lambda_nqm,
    lambda_ratios,
    likelihood_ratio_test,
    ln_gamma,
    log_likelihood,
    wilks_pvalue,
)
from tomocert.backend.measmodel import build_pauli_scheme, predict_probs
from tomocert.backend.rng import derive_seed, stream
from tomocert.backend.simulate import sample_counts

SHAPES = (0.5, 1.0, 3.0, 6.0, 30.0, 480.0)
ARGUMENTS = (0.0, 0.1, 1.0, 5.67015, 11.3403, 100.0, 2000.0)


def _quadrature_q(shape: float, x: float) -> float:
    if x == 0.0:
        return 1.0
    # the integrand peaks at shape - 1; split there for accuracy
    peak = max(x, shape - 1.0)
    log_norm = math.lgamma(shape)

    def integrand(t):
        return math.exp((shape - 1.0) * math.log(t) - t - log_norm)

    head = 0.0
    if peak > x:
        head = integrate.quad(integrand, x, peak, limit=200)[0]
    tail = integrate.quad(integrand, peak, math.inf, limit=200)[0]
    return head + tail


class TestGammaQ:
    """Tests for gamma_q against independent oracles."""

    @pytest.mark.parametrize("shape", SHAPES)
    @pytest.mark.parametrize("x", ARGUMENTS)
    def test_matches_scipy(self, shape, x):
        assert gamma_q(shape, x) == pytest.approx(
            special.gammaincc(shape, x), abs=1e-8
        )

    @pytest.mark.parametrize("shape", (0.5, 1.0, 3.0, 6.0, 30.0))
    @pytest.mark.parametrize("x", (0.1, 1.0, 5.67015, 11.3403, 100.0))
    def test_matches_quadrature(self, shape, x):
        assert gamma_q(shape, x) == pytest.approx(
            _quadrature_q(shape, x), abs=1e-8
        )

    def test_exponential_median(self):
        assert abs(gamma_q(1.0, math.log(2.0)) - 0.5) < 1e-12

    def test_chi_square_median(self):
        """11.3403 is the median of chi-square with 12 degrees."""
        assert gamma_q(6.0, 5.67015) == pytest.approx(0.5, abs=1e-4)

    def test_zero_argument(self):
        assert gamma_q(2.5, 0.0) == 1.0

    @pytest.mark.parametrize(
        "shape, x", [(0.0, 1.0), (-1.0, 1.0), (1.0, -0.1)]
    )
    def test_domain(self, shape, x):
        with pytest.raises(GammaDomainError):
            gamma_q(shape, x)

    @pytest.mark.parametrize("value", [0.1, 0.5, 1.0, 7.5, 480.0])
    def test_ln_gamma(self, value):
        assert ln_gamma(value) == pytest.approx(math.lgamma(value), abs=1e-12)


class TestWilksPvalue:
    def test_zero_statistic(self):
        assert wilks_pvalue(0.0, 12) == 1.0

    def test_median(self):
        assert wilks_pvalue(11.3403, 12) == pytest.approx(0.5, abs=1e-4)

    def test_negative_statistic(self):
        with pytest.raises(GammaDomainError):
            wilks_pvalue(-1.0, 12)

    def test_degenerate_model(self):
        assert wilks_pvalue(1e-8, 0) == 1.0
        with pytest.raises(DegenerateModelError):
            wilks_pvalue(0.5, 0)


class TestDimensionDeficit:
    @pytest.mark.parametrize("qubits, delta", [(1, 0), (2, 12), (3, 126)])
    def test_pauli(self, qubits, delta):
        assert dimension_deficit(build_pauli_scheme(qubits)) == delta

    def test_four_qubits(self):
        assert dimension_deficit(build_pauli_scheme(4)) == 960


class TestLogLikelihood:
    def test_zero_times_log_zero(self, one_qubit):
        counts = CountData(
            4, np.array([[4, 0], [2, 2], [0, 4]]), one_qubit.setting_labels
        )
        probs = np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]])
        expected = 4 * math.log(0.5)
        assert log_likelihood(probs, counts) == pytest.approx(expected)


class TestLikelihoodRatios:
    """Tests for lambda_ratios and likelihood_ratio_test."""

    def test_single_qubit_relaxed_is_saturated(self, one_qubit):
        counts = CountData(
            80,
            np.array([[50, 30], [70, 10], [44, 36]]),
            one_qubit.setting_labels,
        )
        statistic, relaxed = lambda_nqm(counts, one_qubit)
        assert relaxed.converged
        assert statistic <= 1e-6

    def test_nesting(self, two_qubits):
        generator = stream(31)
        for replicate in range(10):
            state = random_density(4, generator)
            counts = sample_counts(
                predict_probs(two_qubits, state),
                150,
                derive_seed(31, replicate),
                two_qubits.setting_labels,
                2,
            )
            result = lambda_ratios(counts, two_qubits)

            assert 0.0 <= result.lambda_nqm <= result.lambda_qm + 1e-6

    def test_full_test(self, two_qubits):
        state = 0.5 * random_density(4, stream(32)) + 0.125 * np.eye(4)
        counts = sample_counts(
            predict_probs(two_qubits, state),
            500,
            32,
            two_qubits.setting_labels,
            2,
        )
        result = likelihood_ratio_test(counts, two_qubits)

        assert result.dimension_deficit == 12
        assert result.p_value == pytest.approx(
            special.gammaincc(6.0, result.lambda_nqm / 2.0), abs=1e-10
        )
        assert not result.boundary_warning
        document = result.to_dict()
        assert document["delta"] == 12
        assert document["diagnostics"]["mle_quantum"]["converged"]

    def test_boundary_warning(self, two_qubits):
        bell = np.zeros((4, 4))
        bell[np.ix_([1, 2], [1, 2])] = [[0.5, -0.5], [-0.5, 0.5]]
        counts = sample_counts(
            predict_probs(two_qubits, bell),
            150,
            33,
            two_qubits.setting_labels,
            2,
        )
        result = lambda_ratios(counts, two_qubits)
        assert result.boundary_warning

    def test_single_qubit_boundary_ratios(self, one_qubit):
        counts = CountData(
            100,
            np.array([[100, 0], [100, 0], [100, 0]]),
            one_qubit.setting_labels,
        )
        result = lambda_ratios(counts, one_qubit)

        optimum = (1.0 + 1.0 / math.sqrt(3.0)) / 2.0
        assert result.lambda_qm == pytest.approx(
            -600.0 * math.log(optimum), abs=1e-3
        )
        assert result.lambda_qm == pytest.approx(142.444, rel=1e-4)
        assert result.lambda_nqm <= 1e-6

    def test_nesting_violation_raises(self, two_qubits, monkeypatch):
        solve = lrt.mle_relaxed

        def worse(*arguments, **keywords):
            outcome = solve(*arguments, **keywords)
            return dataclasses.replace(
                outcome, log_likelihood=outcome.log_likelihood - 10.0
            )

        monkeypatch.setattr(lrt, "mle_relaxed", worse)
        state = 0.5 * random_density(4, stream(36)) + 0.125 * np.eye(4)
        counts = sample_counts(
            predict_probs(two_qubits, state),
            150,
            36,
            two_qubits.setting_labels,
            2,
        )

        with pytest.raises(InconsistentLikelihoodError):
            lambda_ratios(counts, two_qubits)

    def test_inconsistent_error_message(self):
        error = InconsistentLikelihoodError("lambda_qm", -0.5)
        assert "lambda_qm" in str(error)


@pytest.mark.slow
class TestLikelihoodNestingSuite:
    def test_random_datasets(self, two_qubits, one_qubit):
        generator = stream(34)
        for replicate in range(100):
            state = random_density(4, generator)
            counts = sample_counts(
                predict_probs(two_qubits, state),
                150,
                derive_seed(34, replicate),
                two_qubits.setting_labels,
                2,
            )
            result = lambda_ratios(counts, two_qubits)
            assert 0.0 <= result.lambda_nqm <= result.lambda_qm + 1e-6

        for replicate in range(100):
            state = random_density(2, generator)
            probs = 0.9 * predict_probs(one_qubit, state) + 0.05
            counts = sample_counts(
                probs,
                500,
                derive_seed(35, replicate),
                one_qubit.setting_labels,
            )
            if np.any(counts.counts == 0):
                continue
            assert lambda_nqm(counts, one_qubit)[0] <= 1e-6
