"""Seeding helpers.

Subsample indices come from Philox, a counter-based generator: the stream
for subsample ``k`` is keyed by ``(seed, k)`` and position ``i`` is the
counter, so every draw is reproducible regardless of how work is scheduled.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


def subsample_generator(seed: int, k: int) -> np.random.Generator:
    """Independent Philox stream for subsample ``k`` under a 64-bit ``seed``."""
    key = (int(seed) & _MASK64) | ((int(k) & _MASK64) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def child_generator(master_seed: int, *path: int) -> np.random.Generator:
    """Generator for a labelled position (replication, grid point, role...) under a master seed."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(master_seed: int, *path: int) -> int:
    """64-bit integer seed for a labelled position under a master seed."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, np.uint64)[0])
