"""Counter-based random streams with explicit seeds.

Every stochastic API in this package takes an integer seed (or a Generator
built here). Streams are Philox counter-based, keyed by (seed, stream tags),
so that sharded generation is reproducible and independent of thread count.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _stream_hash(tags: tuple) -> int:
    digest = hashlib.sha256(repr(tags).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(seed: int, *tags) -> np.random.Generator:
    """Generator for the stream named by ``tags``, keyed off ``seed``.

    The same (seed, tags) always yields the same stream; distinct tags give
    statistically independent streams.
    """
    key = (int(seed) & _MASK64) | (_stream_hash(tags) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def as_rng(seed_or_rng) -> np.random.Generator:
    """Accept either an integer seed or an existing Generator."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return make_rng(int(seed_or_rng), "default")
