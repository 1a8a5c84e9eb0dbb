import numpy as np
import pytest

from tomocert.backend.measmodel import MeasurementModel, build_pauli_scheme


@pytest.fixture(scope="session")
def one_qubit() -> MeasurementModel:
    return build_pauli_scheme(1)


@pytest.fixture(scope="session")
def two_qubits() -> MeasurementModel:
    return build_pauli_scheme(2)


@pytest.fixture(scope="session")
def three_qubits() -> MeasurementModel:
    return build_pauli_scheme(3)


def random_density(dim: int, generator: np.random.Generator) -> np.ndarray:
    """Draws a full-rank density matrix."""
    gaussian = generator.normal(size=(dim, dim)) + 1j * generator.normal(
        size=(dim, dim)
    )
    state = gaussian @ gaussian.conj().T
    return state / np.trace(state).real


def random_frequencies(
    shape: tuple[int, int], generator: np.random.Generator
) -> np.ndarray:
    """Draws a table whose rows are probability vectors."""
    table = generator.random(shape) + 0.01
    return table / table.sum(axis=1, keepdims=True)
