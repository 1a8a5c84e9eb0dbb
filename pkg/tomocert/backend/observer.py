from __future__ import annotations

import logging
import os
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Callable, Generic, Optional, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")

THREADS_VARIABLE = "TOMOCERT_THREADS"


class Subject(ABC):
    """A subject which observers can subscribe to."""

    __observers: list[Observer]

    def __init__(self) -> None:
        self.__observers = []

    def _notify(self, message: object) -> None:
        """Notifies all the subscribed with the given message.

        Args:
            message (object): The message to pass along to the observers.
        """
        for observer in self.__observers:
            observer._response(message)  # type: ignore


class Observer(ABC):
    """An observer which can subscribe to a subject."""

    @abstractmethod
    def _response(self, message: object) -> None:
        raise NotImplementedError()

    def subscribe(self, sub: Subject) -> None:
        """Subscribes to the given subject.

        Args:
            sub (Subject): The subject to subscribe to.
        """
        if self not in sub._Subject__observers:  # type: ignore
            sub._Subject__observers.append(self)  # type: ignore

    def unsubscribe(self, sub: Subject) -> bool:
        """Unsubscribes from the given subject.

        Returns:
            bool: True if the observer was subscribed to the subject,
                False, otherwise.
        """
        if self in sub._Subject__observers:  # type: ignore
            sub._Subject__observers.remove(self)  # type: ignore
            return True

        return False


@dataclass(frozen=True)
class ReplicateFinished:
    index: int
    total: int


@dataclass(frozen=True)
class ReplicateDropped:
    index: int
    reason: str


class ReplicateDroppedError(Exception):
    """Raised by a replicate job that gives up on its replicate"""

    pass


def thread_limit(configured: Optional[int] = None) -> int:
    """Resolves the worker count.

    ``TOMOCERT_THREADS`` caps the configured count; without either the
    count of CPUs is used.
    """
    limit = configured if configured is not None else (os.cpu_count() or 1)

    capped = os.environ.get(THREADS_VARIABLE)
    if capped:
        try:
            limit = min(limit, int(capped))
        except ValueError:
            logger.warning(
                "ignoring %s=%r, not an integer", THREADS_VARIABLE, capped
            )

    return max(1, limit)


class ReplicateRunner(Subject, Generic[T]):
    """Runs independent replicate jobs on a thread pool.

    Results are ordered by replicate index no matter in which order the
    jobs finish. A job raising ``ReplicateDroppedError`` leaves ``None`` in
    its slot.
    """

    __threads: int

    def __init__(self, threads: Optional[int] = None) -> None:
        super().__init__()
        self.__threads = thread_limit(threads)

    @property
    def threads(self) -> int:
        return self.__threads

    def run(
        self, job: Callable[[int], T], total: int
    ) -> list[Optional[T]]:
        """Runs ``job(index)`` for every index below ``total``."""
        results: list[Optional[T]] = [None] * total

        with ThreadPoolExecutor(max_workers=self.__threads) as executor:
            futures = {
                executor.submit(job, index): index for index in range(total)
            }

            for future in as_completed(futures):
                index = futures[future]
                try:
                    results[index] = future.result()
                except ReplicateDroppedError as error:
                    self._notify(ReplicateDropped(index, str(error)))
                    continue

                self._notify(ReplicateFinished(index, total))

        return results
