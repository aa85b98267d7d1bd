"""Seeded random streams.

All randomness hangs off one integer seed; each consumer (split, init,
shuffle, mask, ...) draws from its own named sub-stream so adding a new
consumer never perturbs the others.
"""

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])
