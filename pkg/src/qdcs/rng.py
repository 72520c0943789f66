"""Deterministic random streams.

A master 64-bit seed plus a short label yields an independent PCG64
stream; identical (seed, label) pairs reproduce bit-for-bit across runs
and platforms.
"""

from __future__ import annotations

import zlib

import numpy as np


def seeded_rng(seed: int, label: str = "") -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    if label:
        entropy.append(zlib.crc32(label.encode("utf-8")))
    return np.random.default_rng(np.random.SeedSequence(entropy))
