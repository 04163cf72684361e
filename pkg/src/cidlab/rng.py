"""Counter-based random streams.

Every stream is a Philox4x64-10 generator keyed through ``SeedSequence``
from a 64-bit seed plus a tuple of integer keys, so replicate ``i`` of a run
seeded with ``s`` always sees the same numbers regardless of worker layout.
"""

import numpy as np

ALGORITHM = "philox4x64-10+seedsequence(numpy)"
MAX_SEED = 2**64 - 1

# stream keys, one per consumer
TRAJECTORY = 0
PROXY = 1
MARTINGALE = 2
DOOB = 3
PATTERN = 4
COVER = 5


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def stream(seed: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def substream_seed(seed: int, index: int) -> int:
    """64-bit seed for replicate ``index`` of a run with master ``seed``."""
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
