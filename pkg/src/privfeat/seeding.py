"""Deterministic generator derivation from structured keys.

Every random draw in the package goes through :func:`rng_for`, so results
depend only on the keys (global seed, utterance id, ...) and never on the
order in which work is scheduled.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (bool, np.bool_)):
        return int(key)
    if isinstance(key, (int, np.integer)):
        value = int(key)
        if value < 0:
            value = (1 << 64) + value
        return value
    if isinstance(key, float):
        return zlib.crc32(repr(key).encode())
    return zlib.crc32(str(key).encode("utf-8"))


def rng_for(*keys) -> np.random.Generator:
    """Return a fresh generator seeded from an arbitrary tuple of ints/strings."""
    return np.random.default_rng(np.random.SeedSequence([_key_to_int(k) for k in keys]))
