import hashlib
import logging
import sys
from contextlib import contextmanager
from typing import Iterator, Optional, TextIO

from tomocert import __version__
from tomocert.backend.measmodel import (
    MeasurementModel,
    build_pauli_scheme,
    load_model_file,
)

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"


def file_digest(path: str) -> str:
    """Gets the SHA-256 digest of a file as ``sha256:<hex>``."""
    with open(path, "rb") as source:
        return "sha256:" + hashlib.sha256(source.read()).hexdigest()


def software_version() -> str:
    return f"tomocert {__version__}"


def configure_logging(verbose: bool, quiet: bool) -> None:
    """Configures the root logger once for the whole run."""
    level = logging.WARNING
    if verbose:
        level = logging.DEBUG
    elif quiet:
        level = logging.ERROR

    logging.basicConfig(
        level=level, format=LOG_FORMAT, stream=sys.stderr, force=True
    )


def model_for(path: Optional[str], qubits: int) -> MeasurementModel:
    """Loads the model file, or builds the Pauli scheme without one."""
    if path is None:
        return build_pauli_scheme(qubits)

    model = load_model_file(path)
    logger.debug("loaded model %s with %d settings", path, model.num_settings)
    return model


@contextmanager
def output_stream(path: Optional[str]) -> Iterator[TextIO]:
    """Opens the output file, or standard output for no path or ``-``."""
    if path is None or path == "-":
        yield sys.stdout
        return

    with open(path, "w", encoding="utf-8", newline="") as sink:
        yield sink
