"""Portable deterministic generator for reproducible random selection.

SplitMix64: the 64-bit state advances by the golden-gamma constant and
each output is the state run through an xorshift-multiply finalizer.
Pure integer arithmetic, so the same seed yields the same draw sequence
on every platform and in every implementation of this recipe:

    state = (state + 0x9E3779B97F4A7C15) mod 2^64
    z = state
    z = ((z XOR z>>30) * 0xBF58476D1CE4E5B9) mod 2^64
    z = ((z XOR z>>27) * 0x94D049BB133111EB) mod 2^64
    output = z XOR z>>31
"""
from __future__ import annotations

MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class SplitMix64:
    def __init__(self, seed: int = 0):
        self._state = seed & MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & MASK64
        return (z ^ (z >> 31)) & MASK64

    def randrange(self, n: int) -> int:
        """Uniform integer in [0, n), bias-free via rejection sampling.

        One selection consumes one draw; the rejection loop only re-rolls
        when n does not divide 2^64, which never happens for power-of-two
        pool sizes.
        """
        if n <= 0:
            raise ValueError("randrange needs a positive bound")
        span = MASK64 + 1
        limit = span - (span % n)
        while True:
            value = self.next_u64()
            if value < limit:
                return value % n

    def choice(self, seq):
        return seq[self.randrange(len(seq))]
