"""Portable 64-bit PRNG used for augmentation draws and dataset shuffling.

All randomness in this package comes from the splitmix64 generator so that
golden outputs can be reproduced bit-for-bit in any language. The exact
recurrence (all arithmetic mod 2**64):

    state  = state + 0x9E3779B97F4A7C15
    z      = state
    z      = (z XOR (z >> 30)) * 0xBF58476D1CE4E5B9
    z      = (z XOR (z >> 27)) * 0x94D049BB133111EB
    output = z XOR (z >> 31)

Derived draws:

    next_float()  = next_u64() >> 11, scaled by 2**-53   (uniform in [0, 1))
    next_below(n) = next_u64() mod n
    shuffle       = Fisher-Yates, i from len-1 down to 1, j = next_below(i + 1)

Independent per-item streams (sample index i under a policy seed s) are
seeded with ``mix64(s XOR mix64((i + 1) * 0x9E3779B97F4A7C15))`` where
``mix64`` is the output scrambler above; this decorrelates neighbouring
indices, which a plain ``s + i`` seed would not.
"""

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """splitmix64 output scrambler (finalizer) on a 64-bit value."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """Deterministic 64-bit generator; see module docstring for the recurrence."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK64
        return mix64(self.state)

    def next_float(self) -> float:
        # 53 high bits -> uniform double in [0, 1)
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def next_below(self, n: int) -> int:
        if n <= 0:
            raise ValueError(f"next_below requires n >= 1, got {n}")
        return self.next_u64() % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle with the documented draw order."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]


def stream_seed(seed: int, index: int) -> int:
    """Seed for the independent sub-stream of item ``index`` under ``seed``."""
    return mix64((seed & _MASK64) ^ mix64(((index + 1) * _GOLDEN) & _MASK64))
