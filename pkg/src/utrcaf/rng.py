"""Named random streams.

A stream is identified by ``(seed, tag, *counters)``. Two calls with the same
identity return generators producing the same sequence, so results never
depend on the order in which independent consumers draw their numbers.
"""

import zlib

import numpy as np


def stream(seed: int, tag: str, *counters: int) -> np.random.Generator:
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(tag.encode("utf-8"))]
    key.extend(int(c) for c in counters)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))
