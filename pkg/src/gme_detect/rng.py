"""Seeded random streams.

Every stochastic routine in the package takes an explicit integer seed and
builds a ``numpy.random.Generator`` backed by PCG64.  PCG64 output for a given
seed is fixed across platforms and numpy releases (numpy's stream-compatibility
policy), which is what makes the dataset files reproducible byte for byte.
"""

from __future__ import annotations

import numpy as np

SEED_BITS = 63


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(master_seed: int, *path: int) -> int:
    """Child seed for item ``path`` of a stream rooted at ``master_seed``.

    Uses SeedSequence hashing so that neighbouring indices give unrelated
    streams; the result fits in a signed 64-bit integer.
    """
    ss = np.random.SeedSequence([int(master_seed), *[int(p) for p in path]])
    word = ss.generate_state(1, dtype=np.uint64)[0]
    return int(word >> np.uint64(64 - SEED_BITS))
