"""Portable pseudo-random stream used by the synthetic generator.

The generator is SplitMix64 (Steele, Lea & Flood 2014): a 64-bit state
advanced by the golden-gamma constant and finalised with two xor-shift
multiply rounds. Derived quantities are defined so another implementation
can reproduce them exactly:

* ``random()``       -> ``(next_u64() >> 11) * 2**-53``
* ``below(n)``       -> ``(next_u64() >> 11) * n >> 53``   (0 <= k < n)
* ``shuffle(xs)``    -> Fisher-Yates from the last index down, swap ``i``
                        with ``below(i + 1)``.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        if n <= 0:
            raise ValueError("n must be positive")
        return ((self.next_u64() >> 11) * n) >> 53

    def between(self, lo: int, hi: int) -> int:
        """Uniform integer in the closed range [lo, hi]."""
        return lo + self.below(hi - lo + 1)

    def shuffle(self, xs: list) -> None:
        for i in range(len(xs) - 1, 0, -1):
            j = self.below(i + 1)
            xs[i], xs[j] = xs[j], xs[i]

    def spawn(self) -> "SplitMix64":
        return SplitMix64(self.next_u64())
