"""Seeded random streams.

Every random draw in the package comes from a Philox (counter-based)
generator keyed by ``(seed, stream, *counters)`` through numpy's
``SeedSequence``. Streams are independent and a stream for step ``k`` can be
rebuilt without replaying steps ``0..k-1``, which is what makes resumed
training identical to an uninterrupted run.
"""

import numpy as np

STREAMS = {"init": 1, "shuffle": 2, "mask": 3, "dropout": 4, "grammar": 5, "gradcheck": 6}

MAX_SEED = 2**64


def check_seed(seed):
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool) or not 0 <= seed < MAX_SEED:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return int(seed)


def make_rng(seed, stream, *counters) -> np.random.Generator:
    seq = np.random.SeedSequence(check_seed(seed), spawn_key=(STREAMS[stream], *map(int, counters)))
    return np.random.Generator(np.random.Philox(seq))
