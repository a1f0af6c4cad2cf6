"""Deterministic stream derivation.

Every stochastic routine in the package draws from a Philox counter-based
64-bit generator. A stream is addressed by an integer seed; sub-streams
(one per Monte Carlo replicate) are derived by hashing (seed, index, ...)
through SplitMix64. The recipe is fixed so that the replicate layout can be
reproduced from this module alone:

    key(parts...) = fold of SplitMix64 over the parts, starting from 0
    stream(parts...) = Philox(key=key(parts...))
"""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def splitmix64(value: int) -> int:
    """One SplitMix64 scramble of a 64-bit integer."""
    z = (value + _GAMMA) & _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def derive_key(*parts: int) -> int:
    """Fold integer parts into a single 64-bit stream key."""
    acc = 0
    for part in parts:
        acc = splitmix64(acc ^ (int(part) & _MASK))
    return acc


def derive_keys(seed: int, indices: np.ndarray) -> np.ndarray:
    """Vectorized derive_key(seed, i) for an array of indices."""
    acc = np.uint64(splitmix64(int(seed) & _MASK))
    z = acc ^ indices.astype(np.uint64)
    with np.errstate(over="ignore"):
        z = z + np.uint64(_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
    return z


def stream(*parts: int) -> np.random.Generator:
    """Philox generator addressed by hashed integer parts."""
    return np.random.Generator(np.random.Philox(key=derive_key(*parts)))


def stream_from_key(key: int) -> np.random.Generator:
    """Philox generator for an already-derived 64-bit key."""
    return np.random.Generator(np.random.Philox(key=int(key) & _MASK))
