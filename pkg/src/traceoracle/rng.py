"""Named random sub-streams derived from one integer seed."""
import zlib

import numpy as np


def stream(seed: int, *names: str) -> np.random.Generator:
    """Independent generator for (seed, names); stable across runs and platforms."""
    key = [int(seed) & 0xFFFFFFFF] + [zlib.crc32(n.encode()) for n in names]
    return np.random.default_rng(key)
