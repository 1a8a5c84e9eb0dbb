"""Certification and survival runs behind the ``certify`` and ``survival``
commands.
"""

import csv
import logging
from typing import Any, Optional, TextIO

import numpy as np

from tomocert.application.auxiliary import (
    file_digest,
    model_for,
    software_version,
)
from tomocert.application.message import Certify, CertifyTest, Survival
from tomocert.application.report import Report, TestRecord
from tomocert.backend import TomocertError
from tomocert.backend.bootstrap import calibrate, run_bootstrap
from tomocert.backend.data import (
    CountData,
    check_compatible,
    drop_one_shot,
    frequencies,
    load_counts_file,
    split_half,
)
from tomocert.backend.lrt import (
    DegenerateModelError,
    InconsistentLikelihoodError,
    LrtResult,
    dimension_deficit,
    lambda_nqm,
    likelihood_ratio_test,
    wilks_pvalue,
)
from tomocert.backend.measmodel import MeasurementModel, load_model_file
from tomocert.backend.observer import ReplicateDroppedError, ReplicateRunner
from tomocert.backend.preference import Preference, WitnessChoice
from tomocert.backend.reconstruct import ConvergenceError, linear_inversion
from tomocert.backend.rng import derive_seed
from tomocert.backend.simulate import (
    StateSpec,
    parse_error_spec,
    simulate_counts,
)
from tomocert.backend.witness import (
    Witness,
    WitnessKind,
    build_kernel_witness,
    load_witness,
    positivity_witness_from_data,
    save_witness,
    witness_test,
)

logger = logging.getLogger(__name__)


class OverfittingError(TomocertError):
    """A witness would be evaluated on the data it was built from"""

    pass


def _witness_record(
    name: str,
    witness: Witness,
    second_half: CountData,
    alpha: float,
    provenance: dict[str, Any],
) -> TestRecord:
    result = witness_test(
        witness,
        frequencies(second_half),
        second_half.shots_per_setting,
        alpha,
    )
    return TestRecord(
        name,
        result.value,
        result.p_bound,
        {
            "shots": result.shots,
            "alpha": alpha,
            "hoeffding_constant": result.hoeffding_constant,
            "t_alpha": result.t_alpha,
            "witness_kind": witness.kind.value,
        },
        {**provenance, "witness": witness.provenance},
    )


def _built_witnesses(
    counts: CountData,
    model: MeasurementModel,
    command: Certify,
    preference: Preference,
    provenance: dict[str, Any],
) -> list[TestRecord]:
    data = counts
    if command.drop_odd_shot and counts.shots_per_setting % 2 == 1:
        data = drop_one_shot(counts, command.seed)

    first, second = split_half(data, command.seed)
    first_freqs = frequencies(first)
    design = model.design
    built: dict[str, Witness] = {}

    if preference.witness in (WitnessChoice.POSITIVITY, WitnessChoice.BOTH):
        built["wp"] = positivity_witness_from_data(first_freqs, design)
    if preference.witness in (WitnessChoice.KERNEL, WitnessChoice.BOTH):
        rho_ls = linear_inversion(first_freqs, design)
        built["wl"] = build_kernel_witness(first_freqs, design, rho_ls)

    origin = {
        "counts_digest": provenance["counts_digest"],
        "split_seed": command.seed,
        "half": 1,
    }
    records = []
    for name, witness in built.items():
        witness = Witness(
            witness.coeffs,
            witness.induced_operator,
            witness.kind,
            provenance={**witness.provenance, **origin},
        )
        if command.save_witness is not None:
            with open(f"{command.save_witness}.{name}.json", "wb") as sink:
                save_witness(witness, sink)

        records.append(
            _witness_record(
                name, witness, second, preference.alpha, provenance
            )
        )

    return records


def _supplied_witness(
    counts: CountData,
    model: MeasurementModel,
    command: Certify,
    preference: Preference,
    provenance: dict[str, Any],
) -> TestRecord:
    assert command.witness is not None
    with open(command.witness, "rb") as source:
        witness = load_witness(source, model.design)

    origin = witness.provenance.get("counts_digest")
    if origin == provenance["counts_digest"]:
        if not command.overfitting_override:
            raise OverfittingError(
                f"{command.witness} was built from {command.counts}; "
                "evaluating it on the same data is not a valid test "
                "(override with --i-understand-overfitting)"
            )
        logger.warning(
            "evaluating %s on the data it was built from", command.witness
        )

    name = "wl" if witness.kind == WitnessKind.KERNEL else "wp"
    return _witness_record(
        name,
        witness,
        counts,
        preference.alpha,
        {**provenance, "witness_digest": file_digest(command.witness)},
    )


def _lrt_record(
    result: LrtResult, counts: CountData, alpha: float, provenance: dict
) -> TestRecord:
    assert result.p_value is not None
    return TestRecord(
        "lrt",
        result.lambda_nqm,
        result.p_value,
        {
            "shots": counts.shots_per_setting,
            "alpha": alpha,
            "delta": result.dimension_deficit,
            "lambda_qm": result.lambda_qm,
            "boundary_warning": result.boundary_warning,
        },
        provenance,
    )


def run_certify(
    command: Certify, preference: Preference, runner: ReplicateRunner
) -> Report:
    """Runs the requested tests on a count file.

    Witnesses are built on one half of the data and evaluated on the
    other. The likelihood ratio tests use all the data.

    Returns:
        Report: One record per test.
    """
    counts = load_counts_file(command.counts)
    model = load_model_file(command.model)
    check_compatible(counts, model)

    provenance = {
        "counts_digest": file_digest(command.counts),
        "model_digest": file_digest(command.model),
        "seed": command.seed,
        "software": software_version(),
    }
    alpha = preference.alpha
    wanted = {command.test}
    if command.test == CertifyTest.ALL:
        wanted = {CertifyTest.WITNESS, CertifyTest.LRT, CertifyTest.BOOTSTRAP}

    records: list[TestRecord] = []

    if CertifyTest.WITNESS in wanted:
        if command.witness is not None:
            records.append(
                _supplied_witness(
                    counts, model, command, preference, provenance
                )
            )
        else:
            records.extend(
                _built_witnesses(
                    counts, model, command, preference, provenance
                )
            )

    observed: Optional[float] = None
    if CertifyTest.LRT in wanted:
        result = likelihood_ratio_test(counts, model, preference.solver)
        observed = result.lambda_nqm
        records.append(_lrt_record(result, counts, alpha, provenance))

    if CertifyTest.BOOTSTRAP in wanted:
        if observed is None:
            observed = lambda_nqm(counts, model, preference.solver)[0]

        samples = run_bootstrap(
            counts,
            model,
            preference.bootstrap_samples,
            command.seed,
            preference.solver,
            runner,
        )
        calibrated = calibrate(
            samples, observed, model, preference.literal_median
        )
        assert calibrated.p_star is not None

        records.append(
            TestRecord(
                "lrt_bootstrap",
                observed,
                calibrated.p_star,
                {
                    "shots": counts.shots_per_setting,
                    "alpha": alpha,
                    "literal_median": preference.literal_median,
                    **calibrated.to_dict(command.emit_samples),
                },
                provenance,
            )
        )

    return Report(
        alpha,
        tuple(records),
        {**provenance, "counts": command.counts, "model": command.model},
    )


def _survival_statistic(
    model: MeasurementModel,
    command: Survival,
    preference: Preference,
    index: int,
) -> float:
    state = StateSpec.parse(command.state, command.qubits)
    err = parse_error_spec(command.error, command.qubits)
    counts = simulate_counts(
        model, state, err, command.shots, derive_seed(command.seed, index)
    )

    try:
        return lambda_nqm(counts, model, preference.solver)[0]
    except (ConvergenceError, InconsistentLikelihoodError) as error:
        raise ReplicateDroppedError(str(error)) from error


def emit_survival(
    command: Survival,
    preference: Preference,
    runner: ReplicateRunner,
    sink: TextIO,
) -> list[tuple[float, float, float]]:
    """Writes the empirical and Wilks survival functions of
    ``lambda_nqm`` as CSV.

    Replicate ``r`` is simulated with the seed derived from
    ``(seed, r)``. The grid runs from 0 to the largest statistic plus 5.

    Raises:
        DegenerateModelError: The model has no positive dimension deficit.

    Returns:
        list[tuple[float, float, float]]: The rows written.
    """
    if command.replicates < 1:
        raise ValueError(
            f"need at least one replicate, got {command.replicates}"
        )

    model = model_for(command.model, command.qubits)
    delta = dimension_deficit(model)
    if delta <= 0:
        raise DegenerateModelError(
            f"the model has dimension deficit {delta}; lambda_nqm vanishes "
            "for every data set and has no survival function"
        )

    results = runner.run(
        lambda index: _survival_statistic(model, command, preference, index),
        command.replicates,
    )
    statistics = np.array([value for value in results if value is not None])
    if statistics.size == 0:
        raise TomocertError("every survival replicate failed to converge")
    if statistics.size < command.replicates:
        logger.warning(
            "%d of %d replicates dropped",
            command.replicates - statistics.size,
            command.replicates,
        )

    grid = np.linspace(
        0.0, float(statistics.max()) + 5.0, preference.survival_points
    )
    rows = [
        (
            float(t),
            float(np.mean(statistics >= t)),
            wilks_pvalue(float(t), delta),
        )
        for t in grid
    ]

    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["t", "empirical_fraction_lambda_ge_t", "wilks_Q"])
    writer.writerows(rows)

    return rows
