"""
Seeded random streams.

Every seeded operation draws from a Philox generator (counter based, 64-bit)
keyed by ``SeedSequence([seed, *keys])``. The same seed and keys give the
same stream on every platform, and streams for different keys are
independent, so per-setting and per-replicate draws never depend on the
order in which they are made.
"""

from __future__ import annotations

import numpy as np

from tomocert.backend import TomocertError

MAX_SEED = 2**64 - 1


class InvalidSeedError(TomocertError):
    """The seed is not an unsigned 64-bit integer"""

    pass


def check_seed(seed: int) -> int:
    """Validates a user supplied seed.

    Args:
        seed (int): The seed to validate.

    Raises:
        InvalidSeedError: The seed is negative or does not fit in 64 bits.

    Returns:
        int: The seed itself.
    """
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise InvalidSeedError(f"seed must be an integer, got {seed!r}")

    if not 0 <= int(seed) <= MAX_SEED:
        raise InvalidSeedError(f"seed {seed} is not an unsigned 64-bit value")

    return int(seed)


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Creates the generator for the given seed and stream keys.

    Args:
        seed (int): The user seed.
        *keys (int): Stream keys, e.g. the setting or replicate index.

    Returns:
        np.random.Generator: A Philox backed generator.
    """
    entropy = [check_seed(seed), *(int(key) for key in keys)]
    bit_generator = np.random.Philox(np.random.SeedSequence(entropy))
    return np.random.Generator(bit_generator)


def derive_seed(seed: int, *keys: int) -> int:
    """Derives a child seed, e.g. the seed of one bootstrap replicate."""
    state = np.random.SeedSequence([check_seed(seed), *keys])
    return int(state.generate_state(1, dtype=np.uint64)[0])
