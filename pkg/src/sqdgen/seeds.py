"""Seed splitting.

Every random stream in a run is derived from one top-level integer seed and a
tuple of keys naming the consumer, for example ``derive_seed(seed, "rbm",
"train", 3)``. String keys are hashed with CRC-32 and the key tuple is fed to
:class:`numpy.random.SeedSequence` as entropy, so distinct key paths give
statistically independent streams and the mapping is stable across platforms.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_words(keys) -> list[int]:
    words = []
    for k in keys:
        if isinstance(k, str):
            words.append(zlib.crc32(k.encode("utf-8")))
        else:
            k = int(k)
            if k < 0:
                raise ValueError("integer seed keys must be non-negative")
            words.append(k)
    return words


def derive_seed(seed: int, *keys) -> int:
    """A 63-bit child seed for the consumer named by ``keys``."""
    if int(seed) < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence([int(seed), *_key_words(keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def derive_rng(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))
