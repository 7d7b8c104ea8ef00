"""Counter-based random streams keyed on (master seed, task kind, task indices).

Each work unit derives its own Philox generator from the key alone, so the draws
of a unit never depend on which worker evaluates it or in what order.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

SEED_MASK = (1 << 64) - 1


def _kind_code(kind: str) -> int:
    return zlib.crc32(kind.encode("utf8"))


@dataclass(frozen=True)
class RandomStreams:
    """A node in the stream tree. ``spawn`` descends, ``generator`` materializes."""

    seed: int
    key: tuple[int, ...] = ()

    def __post_init__(self):
        if not isinstance(self.seed, (int, np.integer)) or isinstance(self.seed, bool):
            raise InvalidArgumentError(f"seed must be an integer, got {self.seed!r}")
        if not 0 <= int(self.seed) <= SEED_MASK:
            raise InvalidArgumentError("seed must fit in 64 unsigned bits")
        object.__setattr__(self, "seed", int(self.seed))

    def spawn(self, kind: str, *indices: int) -> "RandomStreams":
        return RandomStreams(self.seed, self.key + (_kind_code(kind),) + tuple(int(i) for i in indices))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        return np.random.Generator(np.random.Philox(ss))


def as_streams(rng) -> RandomStreams:
    """Accept an int seed or an existing :class:`RandomStreams`."""
    if isinstance(rng, RandomStreams):
        return rng
    return RandomStreams(rng)


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, an int seed or a :class:`RandomStreams`."""
    if isinstance(rng, np.random.Generator):
        return rng
    return as_streams(rng).generator()
