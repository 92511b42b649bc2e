"""Simulated secure aggregation over the ring of integers mod 2^32.

Clients encode their +-1 vectors into the ring and blind them with
pairwise-cancelling masks expanded from shared per-pair seeds; summing all
masked vectors cancels every mask exactly, so the server recovers the
plain coordinate-wise integer sum and nothing else. This is a functional
simulation of the aggregation black box, not cryptography: seeds are held
in one process and no key agreement happens.
"""

from __future__ import annotations

import numpy as np

from .rng import stream

__all__ = [
    "RING_MOD",
    "PairwiseSeeds",
    "encode",
    "mask_update",
    "aggregate",
    "decode_sum",
    "to_le_words",
]

RING_BITS = 32
RING_MOD = 2**RING_BITS


class PairwiseSeeds:
    """Symmetric per-pair 64-bit seeds s[i, j] = s[j, i], refreshed each round."""

    def __init__(self, seeds: np.ndarray):
        n = seeds.shape[0]
        if seeds.shape != (n, n):
            raise ValueError("seed matrix must be square")
        self.n_clients = n
        self._seeds = seeds

    @classmethod
    def derive(cls, master_seed: int, round_idx: int, n_clients: int) -> "PairwiseSeeds":
        gen = stream(master_seed, round_idx, "secagg")
        seeds = np.zeros((n_clients, n_clients), dtype=np.uint64)
        for i in range(n_clients):
            for j in range(i + 1, n_clients):
                s = gen.integers(0, 2**63, dtype=np.uint64)
                seeds[i, j] = s
                seeds[j, i] = s
        return cls(seeds)

    def seed(self, i: int, j: int) -> int:
        if i == j:
            raise ValueError("diagonal seeds are unused")
        return int(self._seeds[i, j])


def _expand_mask(seed: int, length: int) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(seed))
    return gen.integers(0, RING_MOD, size=length, dtype=np.uint32)


def encode(w: np.ndarray) -> np.ndarray:
    """Map a sign vector into the ring: +1 -> 1, -1 -> 2^32 - 1."""
    w = np.asarray(w)
    if not np.all(np.abs(w) == 1):
        raise ValueError("encode expects entries in {-1, +1}")
    return np.where(w > 0, np.uint32(1), np.uint32(RING_MOD - 1)).astype(np.uint32)


def mask_update(
    x: np.ndarray, client: int, seeds: PairwiseSeeds, n_clients: int
) -> np.ndarray:
    """Blind one client's ring vector with pairwise-cancelling masks.

    Adds PRG(s_ij) for j > client and subtracts it for j < client, mod 2^32;
    the signs are opposite on the two sides of each pair, so the masks
    vanish from the sum over all clients.
    """
    if client >= n_clients:
        raise ValueError(f"client index {client} out of range for {n_clients} clients")
    x = np.asarray(x, dtype=np.uint32)
    out = x.copy()
    for j in range(n_clients):
        if j == client:
            continue
        mask = _expand_mask(seeds.seed(client, j), x.size)
        if mask.size != x.size:
            raise ValueError("mask length mismatch")
        if j > client:
            out = out + mask  # uint32 wraps mod 2^32
        else:
            out = out - mask
    return out


def aggregate(masked: list[np.ndarray]) -> np.ndarray:
    """Coordinate-wise ring sum of masked updates."""
    if not masked:
        raise ValueError("nothing to aggregate")
    length = masked[0].size
    total = np.zeros(length, dtype=np.uint32)
    for m in masked:
        if m.size != length:
            raise ValueError("updates must share one length")
        total = total + np.asarray(m, dtype=np.uint32)
    return total


def decode_sum(x: np.ndarray, n_clients: int) -> np.ndarray:
    """Center-lift ring entries to signed integers.

    Exact whenever the true sums lie in [-n_clients, n_clients], which holds
    for sums of +-1 contributions with n_clients < 2^31.
    """
    if n_clients >= 2**31:
        raise ValueError("too many clients for exact center-lifting")
    lifted = np.asarray(x, dtype=np.uint32).astype(np.int64)
    return np.where(lifted >= RING_MOD // 2, lifted - RING_MOD, lifted)


def to_le_words(x: np.ndarray) -> bytes:
    """Ring vector as raw little-endian 32-bit words, for debug dumps."""
    return np.asarray(x, dtype=np.uint32).astype("<u4").tobytes()
