import argparse
import dataclasses
import logging
import sys
from typing import Any, Final, Optional, Sequence

from tomocert.application import auxiliary
from tomocert.application.certify import emit_survival, run_certify
from tomocert.application.message import (
    BuildModel,
    Certify,
    CertifyTest,
    MergeReports,
    Simulate,
    Survival,
)
from tomocert.application.report import Report, merge_reports
from tomocert.backend import TomocertError
from tomocert.backend.data import save_counts
from tomocert.backend.measmodel import (
    ModelValidationError,
    build_pauli_scheme,
    load_model_file,
    save_model,
    validate_model,
)
from tomocert.backend.observer import (
    Observer,
    ReplicateDropped,
    ReplicateFinished,
    ReplicateRunner,
)
from tomocert.backend.preference import (
    Preference,
    WitnessChoice,
    load_preference,
)
from tomocert.backend.simulate import (
    StateSpec,
    parse_error_spec,
    simulate_counts,
)

logger = logging.getLogger(__name__)

EXIT_CLEAN: Final[int] = 0
EXIT_SIGNIFICANT: Final[int] = 1
EXIT_FAILURE: Final[int] = 2


class Application(Observer):
    """Runs one command and reports replicate progress through logging."""

    __preference: Preference
    __runner: ReplicateRunner
    __finished: int

    def __init__(self, preference: Preference) -> None:
        super().__init__()

        self.__preference = preference
        self.__runner = ReplicateRunner(preference.threads)
        self.__finished = 0
        self.subscribe(self.__runner)

    @property
    def preference(self) -> Preference:
        return self.__preference

    def _response(self, message: object) -> None:
        match message:
            case ReplicateFinished(total=total):
                self.__finished += 1
                step = max(1, total // 10)
                if self.__finished % step == 0 or self.__finished == total:
                    logger.info("replicate %d of %d", self.__finished, total)
            case ReplicateDropped(index=index, reason=reason):
                logger.warning("dropped replicate %d: %s", index, reason)

    def execute(self, command: object) -> int:
        """Runs a command message and returns the exit code."""
        self.__finished = 0

        match command:
            case BuildModel() as command:
                self.__build_model(command)
            case Simulate() as command:
                self.__simulate(command)
            case Certify() as command:
                report = run_certify(command, self.__preference, self.__runner)
                return self.__emit_report(report, command.out)
            case Survival() as command:
                with auxiliary.output_stream(command.out) as sink:
                    emit_survival(
                        command, self.__preference, self.__runner, sink
                    )
            case MergeReports() as command:
                report = merge_reports(
                    [Report.load_from_file(path) for path in command.reports],
                    command.alpha,
                )
                return self.__emit_report(report, command.out)
            case _:
                raise ValueError(f"unknown command {command!r}")

        return EXIT_CLEAN

    def __build_model(self, command: BuildModel) -> None:
        if command.effects is not None:
            model = load_model_file(command.effects)
        elif command.qubits is not None:
            model = build_pauli_scheme(command.qubits)
        else:
            raise ValueError("model build needs --qubits or --effects")

        diagnostics = validate_model(model)
        if not diagnostics.passed:
            raise ModelValidationError(diagnostics.summary())

        with open(command.out, "wb") as sink:
            save_model(model, sink)
        logger.info("wrote %s:\n%s", command.out, diagnostics.summary())

    def __simulate(self, command: Simulate) -> None:
        model = auxiliary.model_for(command.model, command.qubits)
        counts = simulate_counts(
            model,
            StateSpec.parse(command.state, command.qubits),
            parse_error_spec(command.error, command.qubits),
            command.shots,
            command.seed,
        )

        with open(command.out, "wb") as sink:
            save_counts(counts, sink)
        logger.info("wrote %s", command.out)

    def __emit_report(self, report: Report, out: Optional[str]) -> int:
        with auxiliary.output_stream(out) as sink:
            sink.write(report.to_json())

        if out is not None and out != "-":
            sys.stdout.write(report.table())

        return EXIT_SIGNIFICANT if report.significant else EXIT_CLEAN


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tomocert",
        description="Certify systematic errors in tomography data.",
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true")
    verbosity.add_argument("--quiet", action="store_true")
    parser.add_argument("--config", help="preference file (JSON)")
    parser.add_argument("--threads", type=int)

    commands = parser.add_subparsers(dest="command", required=True)

    model = commands.add_parser("model", help="measurement models")
    model_commands = model.add_subparsers(dest="action", required=True)
    build = model_commands.add_parser("build", help="write a model file")
    source = build.add_mutually_exclusive_group(required=True)
    source.add_argument("--qubits", type=int, help="Pauli scheme size")
    source.add_argument("--effects", help="custom model file to validate")
    build.add_argument("--out", required=True)

    def add_simulation(command: argparse.ArgumentParser) -> None:
        command.add_argument("--state", required=True)
        command.add_argument("--qubits", type=int, required=True)
        command.add_argument("--shots", type=int, required=True)
        command.add_argument("--error", default="none")
        command.add_argument("--seed", type=int, required=True)
        command.add_argument("--model", help="model file, Pauli by default")
        command.add_argument("--out")

    simulate = commands.add_parser("simulate", help="simulate count data")
    add_simulation(simulate)

    certify = commands.add_parser("certify", help="run tests on counts")
    certify.add_argument(
        "test", choices=[test.value for test in CertifyTest]
    )
    certify.add_argument("--counts", required=True)
    certify.add_argument("--model", required=True)
    certify.add_argument("--seed", type=int)
    certify.add_argument("--alpha", type=float)
    certify.add_argument(
        "--type",
        dest="witness_type",
        choices=[choice.value for choice in WitnessChoice],
    )
    certify.add_argument("--witness", help="witness file to evaluate")
    certify.add_argument("--save-witness", metavar="PREFIX")
    certify.add_argument("--i-understand-overfitting", action="store_true")
    certify.add_argument("--samples", type=int)
    certify.add_argument("--emit-samples", action="store_true")
    certify.add_argument("--literal-median", action="store_true")
    certify.add_argument("--drop-odd-shot", action="store_true")
    certify.add_argument("--out")

    survival = commands.add_parser(
        "survival", help="survival functions of simulated statistics"
    )
    add_simulation(survival)
    survival.add_argument("--replicates", type=int, required=True)
    survival.add_argument("--points", type=int)

    report = commands.add_parser("report", help="reports")
    report_commands = report.add_subparsers(dest="action", required=True)
    merge = report_commands.add_parser("merge", help="merge reports")
    merge.add_argument("reports", nargs="+")
    merge.add_argument("--alpha", type=float)
    merge.add_argument("--out")

    return parser


def _command(
    arguments: argparse.Namespace, preference: Preference
) -> object:
    match arguments.command:
        case "model":
            return BuildModel(
                arguments.out, arguments.qubits, arguments.effects
            )
        case "simulate":
            if arguments.out is None:
                raise ValueError("simulate needs --out")
            return Simulate(
                arguments.state,
                arguments.qubits,
                arguments.shots,
                arguments.error,
                arguments.seed,
                arguments.out,
                arguments.model,
            )
        case "certify":
            return Certify(
                CertifyTest(arguments.test),
                arguments.counts,
                arguments.model,
                preference.seed,
                arguments.out,
                arguments.witness,
                arguments.save_witness,
                arguments.i_understand_overfitting,
                preference.emit_samples,
                preference.drop_odd_shot,
            )
        case "survival":
            return Survival(
                arguments.state,
                arguments.qubits,
                arguments.shots,
                arguments.error,
                arguments.seed,
                arguments.replicates,
                arguments.out,
                arguments.model,
            )
        case _:
            return MergeReports(
                tuple(arguments.reports), arguments.out, arguments.alpha
            )


def _overrides(arguments: argparse.Namespace) -> dict[str, Any]:
    certify = arguments.command == "certify"
    flags = {
        "alpha": arguments.alpha if certify else None,
        "seed": arguments.seed if certify else None,
        "bootstrap_samples": getattr(arguments, "samples", None),
        "survival_points": getattr(arguments, "points", None),
        "threads": arguments.threads,
    }
    if getattr(arguments, "witness_type", None) is not None:
        flags["witness"] = WitnessChoice(arguments.witness_type)
    for switch in ("literal_median", "emit_samples", "drop_odd_shot"):
        if getattr(arguments, switch, False):
            flags[switch] = True

    return {key: value for key, value in flags.items() if value is not None}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Runs the command line and returns the exit code.

    0 means no significant systematic error, 1 a significant one and 2 a
    usage or input failure.
    """
    try:
        arguments = _parser().parse_args(argv)
    except SystemExit as exit_request:
        return EXIT_CLEAN if exit_request.code == 0 else EXIT_FAILURE

    auxiliary.configure_logging(arguments.verbose, arguments.quiet)

    try:
        preference = dataclasses.replace(
            load_preference(arguments.config), **_overrides(arguments)
        )
        command = _command(arguments, preference)
        return Application(preference).execute(command)
    except (TomocertError, OSError, ValueError) as error:
        logger.error("%s", error)
        return EXIT_FAILURE
