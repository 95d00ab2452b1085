"""Counter-based random streams.

Every simulation draws from its own stream, identified by ``(seed, stream)``.
The generator is SplitMix64: the 64-bit state advances by the golden-ratio
increment and each output is the finalizer ``mix64`` of the state. A stream
starts from ``mix64(seed ^ mix64(stream + GOLDEN))``. Doubles take the top 53
bits. The compiled engine implements the exact same arithmetic, so a run is
bit-identical whichever backend produced it.
"""
from __future__ import annotations

import hashlib
import math

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
TWO_M53 = 2.0**-53


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def stream_start(seed: int, stream: int) -> int:
    return mix64((seed & MASK64) ^ mix64(((stream & MASK64) + GOLDEN) & MASK64))


class RngStream:
    """One reproducible stream of doubles."""

    __slots__ = ("seed", "stream", "state", "draws")

    def __init__(self, seed: int, stream: int = 0):
        self.seed = seed & MASK64
        self.stream = stream & MASK64
        self.state = stream_start(seed, stream)
        self.draws = 0

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        self.draws += 1
        return mix64(self.state)

    def random(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * TWO_M53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def exponential(self, rate: float) -> float:
        return -math.log(1.0 - self.random()) / rate


def key64(*parts) -> int:
    """Stable 64-bit key for a tuple of plain values (used for stream ids)."""
    text = "|".join(repr(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")
