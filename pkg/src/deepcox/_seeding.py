"""Seed derivation.

Every stream of randomness is obtained from a top-level seed plus a tuple
of integer keys, so results never depend on execution order or on how work
is split across threads.
"""

import numpy as np

from .errors import InvalidArgumentError

# stream tags
SUBSAMPLE = 1
INIT = 2
DROPOUT = 3
DATA = 4
ENSEMBLE = 5
TEST_SET = 6
OVERLAP = 7
PROBE = 8


def check_seed(seed):
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise InvalidArgumentError(f"seed must be an integer, got {seed!r}")
    if seed < 0 or seed >= 2**64:
        raise InvalidArgumentError(f"seed must lie in [0, 2**64), got {seed}")
    return int(seed)


def derive_seed(seed, *keys):
    """Return a 64-bit integer seed derived from ``seed`` and ``keys``."""
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in keys))
    lo, hi = ss.generate_state(2, np.uint32)
    return int(lo) | (int(hi) << 32)


def derive_rng(seed, *keys):
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))
