"""Portable seeded randomness: xoshiro256** seeded through splitmix64.

A single named generator keeps every stochastic component (environment
resets, exploration, replay sampling, weight init, synthetic data) on one
reproducible stream family, independent of Python's hash randomization and
of numpy's global state.
"""

from __future__ import annotations

import math

_MASK = (1 << 64) - 1
_INV_2_53 = 2.0**-53


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state once; returns (new_state, output word)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def _fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h = ((h ^ byte) * 0x100000001B3) & _MASK
    return h


def derive_seed(root: int, *path: int | str) -> int:
    """Deterministically derive a child seed from a root seed and a path.

    Path tokens (ints or strings) are folded through splitmix64, so distinct
    paths yield independent-looking streams from the same root.
    """
    s = root & _MASK
    for token in path:
        t = _fnv1a64(token.encode("utf-8")) if isinstance(token, str) else token & _MASK
        s, word = splitmix64(s ^ t)
        s = word
    _, word = splitmix64(s)
    return word


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class Xoshiro256:
    """xoshiro256** stream with its state filled from the seed via splitmix64."""

    __slots__ = ("_s0", "_s1", "_s2", "_s3", "_spare")

    def __init__(self, seed: int):
        sm = seed & _MASK
        sm, self._s0 = splitmix64(sm)
        sm, self._s1 = splitmix64(sm)
        sm, self._s2 = splitmix64(sm)
        _, self._s3 = splitmix64(sm)
        self._spare: float | None = None

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        result = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        self._s0, self._s1, self._s2 = s0, s1, s2
        self._s3 = _rotl(s3, 45)
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) built from 53 random bits."""
        return (self.next_u64() >> 11) * _INV_2_53

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def randrange(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        i = int(self.random() * n)
        return i if i < n else n - 1

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        """Gaussian draw via Box-Muller; pairs of uniforms, spare cached."""
        if self._spare is not None:
            z, self._spare = self._spare, None
        else:
            u1 = ((self.next_u64() >> 11) + 1) * _INV_2_53  # in (0, 1]
            u2 = self.random()
            r = math.sqrt(-2.0 * math.log(u1))
            z = r * math.cos(2.0 * math.pi * u2)
            self._spare = r * math.sin(2.0 * math.pi * u2)
        return mean + std * z
