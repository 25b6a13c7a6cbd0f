"""Deterministic, portable random number generation.

All randomness in the toolkit flows through SplitMix64, a published 64-bit
PRNG (Steele, Lea & Flood, "Fast splittable pseudorandom number generators",
OOPSLA 2014). It is trivially portable: the same seed yields the same stream
on every platform and in any language, which keeps shuffled prompts and
synthetic corpora reproducible across runs and machines.
"""

from __future__ import annotations

import hashlib

_MASK64 = 0xFFFFFFFFFFFFFFFF


class SplitMix64:
    """SplitMix64 stream over a 64-bit state."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return (z ^ (z >> 31)) & _MASK64

    def below(self, n: int) -> int:
        """Uniform-ish integer in [0, n). Plain modulo reduction; the bias is
        negligible for the small bounds used here and keeps the reduction
        portable."""
        if n <= 0:
            raise ValueError("bound must be positive")
        return self.next_u64() % n

    def random(self) -> float:
        # 53-bit mantissa, same construction as most 64-bit generators.
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle driven by this stream."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


def derive_seed(run_seed: int, *labels: str) -> int:
    """Derive a stable 64-bit sub-seed from a run seed and string labels.

    Uses BLAKE2b over the little-endian run seed and the NUL-joined labels,
    so per-utterance seeds do not depend on processing order or on Python's
    randomized ``hash()``.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update((run_seed & _MASK64).to_bytes(8, "little"))
    for label in labels:
        h.update(b"\x00")
        h.update(label.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")
