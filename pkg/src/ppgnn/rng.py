"""Seeded random streams.

Every stochastic operation in the package draws from a Philox-4x64 generator
(counter based, 64-bit) built here, so fixtures are reproducible across
platforms for a given numpy release.
"""

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.Generator(np.random.Philox(int(seed)))
