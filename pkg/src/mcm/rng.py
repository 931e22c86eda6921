"""Seeded random streams.

Every consumer (weight init, dropout, shuffling, negative sampling, ...) draws
from its own stream so that adding draws to one never shifts another. Streams
are Philox-4x64 generators keyed by ``(seed, stream_id)``; Philox is
counter-based, so the output depends only on the key and the number of draws,
not on the platform.
"""

from __future__ import annotations

import zlib

import numpy as np

# Well-known stream ids. Anything else is hashed with CRC-32.
STREAMS = {
    "init": 1,
    "dropout": 2,
    "shuffle": 3,
    "negative": 4,
    "split": 5,
    "skipgram": 6,
}

_MASK64 = (1 << 64) - 1


def stream_id(name: str | int) -> int:
    if isinstance(name, int):
        return name & _MASK64
    if name in STREAMS:
        return STREAMS[name]
    return 0x1000 + zlib.crc32(name.encode("utf-8"))


class Rng:
    """Factory of independent, reproducible generators for one seed."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & _MASK64
        self._streams: dict[int, np.random.Generator] = {}

    def stream(self, name: str | int) -> np.random.Generator:
        """Return the generator for `name`, creating it on first use.

        Repeated calls return the same generator object, so draws continue
        where the previous caller left off.
        """
        sid = stream_id(name)
        gen = self._streams.get(sid)
        if gen is None:
            gen = fresh_generator(self.seed, sid)
            self._streams[sid] = gen
        return gen

    def child(self, name: str | int) -> "Rng":
        """Derive an independent Rng, e.g. one per grid cell."""
        sid = stream_id(name)
        g = fresh_generator(self.seed, sid ^ 0x9E3779B97F4A7C15)
        return Rng(int(g.integers(0, 2**63)))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed})"


def fresh_generator(seed: int, sid: int) -> np.random.Generator:
    bitgen = np.random.Philox(key=np.array([seed & _MASK64, sid & _MASK64], dtype=np.uint64))
    return np.random.Generator(bitgen)
