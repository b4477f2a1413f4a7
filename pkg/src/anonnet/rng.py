"""Seedable, portable random number generation for experiments.

The generator is splitmix64 (Steele, Lea & Flood's mixing function), chosen
because a faithful re-implementation fits in a dozen lines of any language,
which keeps published experiment CSVs replicable outside this package.  The
identifier recorded in CSV headers is :data:`RNG_ID`.

Integer draws use the plain modulo reduction ``lo + next() % (hi - lo + 1)``.
The tiny modulo bias is irrelevant for simulation inputs and keeps the draw
sequence trivial to reproduce.
"""

from __future__ import annotations

RNG_ID = "splitmix64-v1"

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """The splitmix64 finalizer: a 64-bit bijective scrambler."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(master: int, *parts: int) -> int:
    """Deterministically derive a sub-stream seed from a master seed.

    Used so that every run of a sweep gets an independent stream that
    depends only on (master seed, graph size, run index), never on
    execution order.
    """
    s = mix64(master)
    for p in parts:
        s = mix64(s ^ mix64(p & _MASK))
    return s


class SplitMix64:
    """Sequential splitmix64 stream."""

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK
        return mix64(self._state)

    def randint(self, lo: int, hi: int) -> int:
        """Uniform-ish integer in [lo, hi] (inclusive), modulo reduction."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        return lo + self.next_u64() % (hi - lo + 1)

    def choice(self, seq):
        return seq[self.randint(0, len(seq) - 1)]
