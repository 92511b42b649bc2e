"""Local optimizers: Adam (with clipping, for BNN training) and plain SGD.

Adam follows the standard first/second-moment recursion with bias
correction; beta1 = 0.5 matches the experimental momentum setting. After
each Adam step the auxiliary weights (and biases) are clamped to [-1, 1],
so downstream stochastic binarization always sees in-range values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .binarize import clip_params
from .network import NetworkParams

__all__ = ["LrSchedule", "AdamState", "adam_step", "sgd_step"]


@dataclass(frozen=True)
class LrSchedule:
    """Step-decay schedule: lr(round) = initial * factor^(round // every)."""

    initial_lr: float = 0.1
    decay_factor: float = 0.1
    decay_every: int = 40

    def lr(self, round_idx: int) -> float:
        return self.initial_lr * self.decay_factor ** (round_idx // self.decay_every)


@dataclass
class AdamState:
    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray | None]
    v_b: list[np.ndarray | None]
    step: int = 0
    beta1: float = 0.5
    beta2: float = 0.999
    eps_stab: float = 1e-8

    @classmethod
    def for_params(cls, params: NetworkParams, beta1: float = 0.5,
                   beta2: float = 0.999, eps_stab: float = 1e-8) -> "AdamState":
        return cls(
            m_w=[np.zeros_like(a) for a in params.aux],
            v_w=[np.zeros_like(a) for a in params.aux],
            m_b=[np.zeros_like(b) if b is not None else None for b in params.bias],
            v_b=[np.zeros_like(b) if b is not None else None for b in params.bias],
            beta1=beta1,
            beta2=beta2,
            eps_stab=eps_stab,
        )

    def copy(self) -> "AdamState":
        return AdamState(
            m_w=[m.copy() for m in self.m_w],
            v_w=[v.copy() for v in self.v_w],
            m_b=[m.copy() if m is not None else None for m in self.m_b],
            v_b=[v.copy() if v is not None else None for v in self.v_b],
            step=self.step,
            beta1=self.beta1,
            beta2=self.beta2,
            eps_stab=self.eps_stab,
        )


def _adam_update(m, v, g, state: AdamState, lr: float):
    m *= state.beta1
    m += (1 - state.beta1) * g
    v *= state.beta2
    v += (1 - state.beta2) * (g * g)
    denom = np.sqrt(v / (1 - state.beta2**state.step))
    denom += state.eps_stab
    step_size = lr / (1 - state.beta1**state.step)
    return step_size * m / denom


def adam_step(state: AdamState, params: NetworkParams, grads, lr: float) -> NetworkParams:
    """One Adam update of the auxiliary weights, followed by clipping.

    Mutates `state` and `params` in place and returns `params`.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be > 0, got {lr}")
    state.step += 1
    for k, g in enumerate(grads):
        if g["w"].shape != params.aux[k].shape:
            raise ValueError("gradient/weight shape mismatch")
        params.aux[k] -= _adam_update(state.m_w[k], state.v_w[k], g["w"], state, lr)
        params.aux[k] = clip_params(params.aux[k])
        if g["b"] is not None:
            params.bias[k] -= _adam_update(state.m_b[k], state.v_b[k], g["b"], state, lr)
            params.bias[k] = clip_params(params.bias[k])
    return params


def sgd_step(params: NetworkParams, grads, lr: float) -> NetworkParams:
    """Plain unclipped SGD on the auxiliary weights (full-precision baseline)."""
    if lr <= 0:
        raise ValueError(f"learning rate must be > 0, got {lr}")
    for k, g in enumerate(grads):
        params.aux[k] -= lr * g["w"]
        if g["b"] is not None:
            params.bias[k] -= lr * g["b"]
    return params
