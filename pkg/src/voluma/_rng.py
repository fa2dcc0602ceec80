"""Deterministic random streams.

All randomness in the package flows through counter-based Philox
generators keyed by explicit integer seeds, so any draw is reproducible
from its seed alone and independent streams can be derived for parallel
work without coordination.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(z: int) -> int:
    """One round of the splitmix64 mixing function (64-bit)."""
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def derive_seed(seed: int, index: int) -> int:
    """Derive the sub-stream seed for (seed, index).

    Fixed mixing so that replicate ``index`` always sees the same stream
    for a given master seed, no matter how work is scheduled.
    """
    return splitmix64(splitmix64(seed & _MASK64) ^ ((index + 1) & _MASK64))


def generator(seed: int) -> np.random.Generator:
    """Counter-based generator for the given 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=seed & _MASK64))
