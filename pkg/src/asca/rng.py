"""Seeded random streams.

Every stochastic step draws from numpy's PCG64 bit generator, seeded through
``SeedSequence`` so child streams (per sentence, per item) do not depend on
how work is scheduled.
"""

import numpy as np

SEED_MASK = (1 << 64) - 1


def generator(seed, *path):
    """PCG64 generator for ``seed`` and an optional integer spawn path."""
    entropy = [int(seed) & SEED_MASK] + [int(p) & SEED_MASK for p in path]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed, *path):
    """A 64-bit child seed, stable across platforms."""
    entropy = [int(seed) & SEED_MASK] + [int(p) & SEED_MASK for p in path]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])
