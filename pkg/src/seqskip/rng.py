"""Deterministic named random streams derived from a single base seed."""

from __future__ import annotations

import zlib

import numpy as np


def rng_stream(seed: int, *tags: object) -> np.random.Generator:
    """Return a generator seeded by ``seed`` plus a stable hash of ``tags``.

    ``hash()`` is salted per process, so tags are folded in with crc32
    instead to keep streams reproducible across runs.
    """
    entropy = [int(seed) & 0xFFFFFFFF]
    entropy.extend(zlib.crc32(str(t).encode("utf-8")) for t in tags)
    return np.random.default_rng(entropy)
