"""Counter-based random streams.

Every draw is a pure function of (seed, counter): the Philox key is the seed
and the call counter sits in the high word of the Philox block counter, so
consecutive calls never share blocks. Child streams get keys derived from the
parent seed, which lets parallel workers use disjoint streams.
"""
from __future__ import annotations

import numpy as np

from .tensor import Tensor

_MASK64 = (1 << 64) - 1


class RngStream:
    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & _MASK64
        self.counter = int(counter)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, counter={self.counter})"

    def generator(self) -> np.random.Generator:
        """A numpy Generator for the current counter; advances the counter."""
        bitgen = np.random.Philox(key=self.seed, counter=[0, 0, 0, self.counter & _MASK64])
        self.counter += 1
        return np.random.Generator(bitgen)

    def child(self, tag: int | str) -> "RngStream":
        if isinstance(tag, str):
            tag = int.from_bytes(tag.encode("utf-8")[:16].ljust(16, b"\0"), "little")
        words = [self.seed & 0xFFFFFFFF, self.seed >> 32, tag & 0xFFFFFFFF, (tag >> 32) & _MASK64]
        state = np.random.SeedSequence(words).generate_state(1, np.uint64)
        return RngStream(int(state[0]))

    def copy(self) -> "RngStream":
        return RngStream(self.seed, self.counter)


def sample_gaussian(stream: RngStream, shape, dtype=np.float64) -> Tensor:
    """i.i.d. standard normal tensor of ``shape``."""
    shape = tuple(int(s) for s in np.atleast_1d(shape)) if np.ndim(shape) else (int(shape),)
    if any(s < 0 for s in shape):
        raise ValueError(f"invalid shape {shape}")
    return Tensor(stream.generator().standard_normal(shape).astype(dtype, copy=False))
