"""Seeded random number generation.

Every stochastic choice in the package (weight init, shuffling, noise,
synthetic data) flows through `make_rng`, backed by the counter-based
Philox generator. A run is fully determined by one recorded 64-bit seed;
independent streams are derived by mixing integer stream tags into the
seed sequence.
"""

import numpy as np


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for (seed, stream...). Same arguments -> same stream."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))
