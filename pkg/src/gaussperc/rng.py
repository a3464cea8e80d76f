"""Counter-based random streams addressed by (seed, stream, counter).

Philox-4x64 keyed by ``(seed, stream)``: every Monte Carlo trial gets its own
key, so trials are independent and reproducible in any execution order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GENERATOR_NAME = "numpy.random.Philox(4x64-10), key=(seed, stream), counter=(counter, 0, 0, 0)"

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngState:
    seed: int
    stream: int = 0
    counter: int = 0

    def __post_init__(self):
        for name in ("seed", "stream", "counter"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 0 or v > _MASK64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {v!r}")

    def generator(self) -> np.random.Generator:
        bitgen = np.random.Philox(
            key=np.array([self.seed, self.stream], dtype=np.uint64),
            counter=np.array([self.counter, 0, 0, 0], dtype=np.uint64),
        )
        return np.random.Generator(bitgen)

    def child(self, stream: int) -> "RngState":
        return RngState(self.seed, stream, 0)


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Generator for trial number ``trial`` of a run seeded with ``seed``."""
    return RngState(int(seed), int(trial)).generator()


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngState):
        return rng.generator()
    if isinstance(rng, (int, np.integer)):
        return RngState(int(rng)).generator()
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")
