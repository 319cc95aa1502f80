"""SplitMix64: the one pseudo-random generator used everywhere in musicsim.

State advances by the golden-ratio increment ``0x9E3779B97F4A7C15`` and each
output is the xorshift-multiply finaliser::

    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

(all arithmetic mod 2**64). Output ``i`` (0-based) only depends on
``seed + (i + 1) * GAMMA``, which makes block generation vectorisable and lets
any other implementation reproduce the same stream.

Gaussians use Box-Muller on consecutive output pairs, uniforms take the top 53
bits mapped to (0, 1].
"""

from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
MASK64 = (1 << 64) - 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


def fnv1a64(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & MASK64
    return h


def derive_seed(seed: int, name: str) -> int:
    """Per-module seed: ``(seed + fnv1a64(name)) mod 2**64``."""
    return (int(seed) + fnv1a64(name)) & MASK64


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return mix64(self.state)

    def u64_block(self, count: int) -> np.ndarray:
        """Next ``count`` outputs as a uint64 array; advances the state."""
        with np.errstate(over="ignore"):
            steps = np.arange(1, count + 1, dtype=np.uint64) * np.uint64(GAMMA)
            z = np.uint64(self.state) + steps
            out = _mix64_array(z)
        self.state = (self.state + count * GAMMA) & MASK64
        return out

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def uniform_block(self, count: int) -> np.ndarray:
        bits = self.u64_block(count) >> np.uint64(11)
        return (bits.astype(np.float64) + 1.0) * (1.0 / 9007199254740992.0)

    def normal_block(self, count: int) -> np.ndarray:
        pairs = (count + 1) // 2
        u = self.uniform_block(2 * pairs)
        u1, u2 = u[0::2], u[1::2]
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:count]
