"""Seeded, schedule-independent random stream derivation.

Every source of randomness in a run is a child stream of one master seed,
keyed by a path such as (client, round, purpose). Streams are derived with
a counter-based generator (Philox) through numpy's SeedSequence, so the
same (seed, path) always yields the same sequence regardless of how many
other streams were consumed, in what order, or on which thread.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np


def _key_part(part: int | str) -> int:
    if isinstance(part, str):
        # stable across processes, unlike hash()
        return zlib.crc32(part.encode("utf-8"))
    if part < 0:
        raise ValueError(f"stream path ints must be non-negative, got {part}")
    return int(part)


def stream(seed: int, *path: int | str) -> np.random.Generator:
    """Derive an independent generator from `seed` and a path of ints/strings."""
    key = tuple(_key_part(p) for p in path)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def child_seed(seed: int, *path: int | str) -> int:
    """Derive a 63-bit child seed (for APIs that take a plain seed)."""
    return int(stream(seed, *path).integers(0, 2**63, dtype=np.uint64))


@dataclass(frozen=True)
class NoiseStream:
    """Identity of one random stream: master seed plus (client, round, purpose).

    Identical fields give an identical sequence across runs and platforms.
    A single stream must not be shared by concurrent consumers; derive one
    per (client, round, purpose) instead.
    """

    seed: int
    client: int
    round_idx: int
    purpose: str

    def generator(self) -> np.random.Generator:
        return stream(self.seed, self.client, self.round_idx, self.purpose)


def as_generator(rng: NoiseStream | np.random.Generator) -> np.random.Generator:
    if isinstance(rng, NoiseStream):
        return rng.generator()
    return rng
