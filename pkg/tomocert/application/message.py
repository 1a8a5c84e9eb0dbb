from dataclasses import dataclass
from enum import Enum
from typing import Optional


class CertifyTest(Enum):
    """The tests ``certify`` can run"""

    WITNESS = "witness"
    LRT = "lrt"
    BOOTSTRAP = "bootstrap"
    ALL = "all"


@dataclass(frozen=True)
class BuildModel:
    """
    Signals to write a model file
    """

    out: str
    qubits: Optional[int] = None
    effects: Optional[str] = None
    """A custom model file to validate and rewrite"""


@dataclass(frozen=True)
class Simulate:
    """
    Signals to simulate count data
    """

    state: str
    qubits: int
    shots: int
    error: str
    seed: int
    out: str
    model: Optional[str] = None


@dataclass(frozen=True)
class Certify:
    """
    Signals to run certification tests on count data
    """

    test: CertifyTest
    counts: str
    model: str
    seed: int
    out: Optional[str] = None
    witness: Optional[str] = None
    """A previously built witness to evaluate on the full data"""
    save_witness: Optional[str] = None
    overfitting_override: bool = False
    emit_samples: bool = False
    drop_odd_shot: bool = False


@dataclass(frozen=True)
class Survival:
    """
    Signals to emit the survival function of simulated statistics
    """

    state: str
    qubits: int
    shots: int
    error: str
    seed: int
    replicates: int
    out: Optional[str] = None
    model: Optional[str] = None


@dataclass(frozen=True)
class MergeReports:
    """
    Signals to merge report files
    """

    reports: tuple[str, ...]
    out: Optional[str] = None
    alpha: Optional[float] = None
    """Overrides the significance level of the first report"""
