"""Named random substreams derived from one explicit seed.

Every consumer of randomness asks for ``substream(seed, tag, index)``.
The generator is seeded with ``SeedSequence(entropy=seed,
spawn_key=(crc32(tag), index))`` so that streams for different purposes
(environment layout, sampling chunks, weight init, shuffles) never overlap
and do not depend on call order.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def tag_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def substream(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=(tag_key(tag), int(index)))
    return np.random.default_rng(ss)


def derive_seed(seed: int, tag: str, index: int = 0) -> int:
    """A 63-bit integer seed for components that take plain integers."""
    ss = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=(tag_key(tag), int(index)))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
