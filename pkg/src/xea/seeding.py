"""Deterministic RNG streams derived from one experiment seed.

Every stochastic operation in the library draws from a generator obtained
here.  A stream is identified by the experiment seed plus a tuple of string
labels; the labels are hashed with CRC32 so the mapping is stable across
platforms and Python versions (unlike the builtin ``hash``).
"""

from __future__ import annotations

import zlib

import numpy as np


def rng(seed: int, *labels: str | int) -> np.random.Generator:
    """Return a Generator for the stream named by ``labels`` under ``seed``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for label in labels:
        if isinstance(label, str):
            entropy.append(zlib.crc32(label.encode("utf-8")))
        else:
            entropy.append(int(label) & 0xFFFFFFFFFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))
