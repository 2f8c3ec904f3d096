"""Deterministic RNG substream derivation.

Every randomized stage derives its generator from (master seed, tags...)
so runs are reproducible and stages are independent of each other's
consumption order. String tags are hashed with crc32, which is stable
across platforms and Python versions.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, *tags: int | str) -> np.random.Generator:
    """Generator for the (seed, tags...) substream."""
    words = [int(seed) & 0xFFFFFFFF]
    for tag in tags:
        if isinstance(tag, str):
            words.append(zlib.crc32(tag.encode("utf-8")))
        else:
            words.append(int(tag) & 0xFFFFFFFF)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))
