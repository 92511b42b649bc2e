"""Binarization and clipping of auxiliary weights."""

from __future__ import annotations

import numpy as np

from ..rng import NoiseStream, as_generator

__all__ = ["sign", "sto_sign", "clip_params"]


def sign(w: np.ndarray) -> np.ndarray:
    """Element-wise sign with the fixed tie rule sign(0) = +1."""
    w = np.asarray(w, dtype=np.float64)
    return np.where(w >= 0, 1.0, -1.0)


def sto_sign(w: np.ndarray, rng: NoiseStream | np.random.Generator) -> np.ndarray:
    """Stochastic binarization: +1 with probability (1 + w) / 2.

    Unbiased on [-1, 1]: E[output] = w exactly. Inputs must already be
    clipped; values outside [-1, 1] are a contract violation.
    """
    w = np.asarray(w, dtype=np.float64)
    if np.any(np.abs(w) > 1):
        raise ValueError("sto_sign requires values in [-1, 1]; clip first")
    gen = as_generator(rng)
    u = gen.random(w.shape)
    return np.where(u < (1 + w) / 2, 1.0, -1.0)


def clip_params(aux: np.ndarray) -> np.ndarray:
    """Element-wise clamp to [-1, 1]."""
    return np.clip(np.asarray(aux, dtype=np.float64), -1.0, 1.0)
