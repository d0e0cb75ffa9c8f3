import numpy as np


def rng_for(*keys: int) -> np.random.Generator:
    """Independent Philox stream identified by a tuple of non-negative ints.

    Streams depend only on ``keys``, so any replicate can be regenerated
    without drawing the ones before it.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in keys])))


def derive_seed(*keys: int) -> int:
    """A 32-bit seed derived from ``keys``."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])
