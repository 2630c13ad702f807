"""Deterministic RNG derivation.

Every random draw in the package flows from numpy SeedSequence keyed on a
root seed plus a string path, so any episode, parameter init, or eval stream
can be regenerated in isolation (and in parallel) without shared state.
"""

from __future__ import annotations

import zlib

import numpy as np


def derive_rng(seed: int, *path) -> np.random.Generator:
    """Child generator for (seed, path...). Strings hash via crc32."""
    entropy = [int(seed) & 0xFFFFFFFF]
    for part in path:
        if isinstance(part, str):
            entropy.append(zlib.crc32(part.encode("utf-8")))
        else:
            entropy.append(int(part) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(seed: int, *path) -> int:
    """Collapse a derived stream to one 31-bit integer seed."""
    return int(derive_rng(seed, *path).integers(2 ** 31))
