"""Element-wise randomized response over sign vectors.

Operates on vectors with entries in {-1, +1}; a "flip" is negation, which
corresponds to the classic bit-flip channel under the mapping -1 <-> 0,
+1 <-> 1. Each entry is kept with probability 1/2 + gamma, independently.
No debiasing is applied anywhere downstream; the server works with the raw
noised signs.
"""

from __future__ import annotations

import numpy as np

from .rng import NoiseStream, as_generator

__all__ = ["rr_apply", "expected_value"]


def rr_apply(
    w: np.ndarray,
    gamma: float,
    rng: NoiseStream | np.random.Generator,
    force_identity: bool = False,
) -> np.ndarray:
    """Pass a sign vector through the randomized-response channel.

    Entries are kept with probability 1/2 + gamma and negated otherwise,
    i.i.d. Deterministic given the stream identity. `force_identity` is a
    test hook that returns the input unchanged without consuming any
    randomness (the no-noise protocol mode routes through it).
    """
    if not 0 <= gamma < 0.5:
        raise ValueError(f"flip bias gamma must be in [0, 0.5), got {gamma}")
    w = np.asarray(w, dtype=np.float64)
    if force_identity:
        return w.copy()
    gen = as_generator(rng)
    flip = gen.random(w.shape) < (0.5 - gamma)
    return np.where(flip, -w, w)


def expected_value(w_entry: float, gamma: float) -> float:
    """Exact mean of the channel output for a single +-1 entry: 2*gamma*w."""
    if not 0 <= gamma < 0.5:
        raise ValueError(f"flip bias gamma must be in [0, 0.5), got {gamma}")
    if w_entry not in (-1.0, 1.0, -1, 1):
        raise ValueError(f"entry must be -1 or +1, got {w_entry}")
    return 2 * gamma * w_entry
