"""Shared independent oracles for tests: high-precision Renyi divergence and
finite-difference gradient checking."""

from __future__ import annotations

import numpy as np
from mpmath import mp, mpf
from mpmath import log as mplog
from mpmath import power as mppow

mp.dps = 50


def renyi_mp(gamma: float, alpha: float, reverse: bool = False):
    """Term-by-term Renyi divergence between the channel's two output
    distributions (1/2+g, 1/2-g) and (1/2-g, 1/2+g), in high precision."""
    p = mpf("0.5") + mpf(repr(gamma))
    q = mpf("0.5") - mpf(repr(gamma))
    first = [p, q]
    second = [q, p]
    if reverse:
        first, second = second, first
    if alpha == 1:
        return sum(a * mplog(a / b) for a, b in zip(first, second))
    a = mpf(repr(alpha))
    total = sum(mppow(x, a) * mppow(y, 1 - a) for x, y in zip(first, second))
    return mplog(total) / (a - 1)


def renyi_divergence_oracle(gamma: float, alpha: float) -> float:
    return float(renyi_mp(gamma, alpha))


def pool_pattern(net, cache):
    """Argmax index arrays of every pooling layer, from a forward cache."""
    caches, _, _ = cache
    return [
        caches[i][0]
        for i, spec in enumerate(net.specs)
        if spec.kind == "maxpool2x2"
    ]


def fd_check(net, params, x, y, n_coords, gen, step=1e-4, rtol=1e-4):
    """Central finite differences against analytic gradients on the
    full-precision surrogate (weights = aux).

    The loss is piecewise-smooth in the weights through max pooling;
    coordinates whose +-step perturbation flips a pooling argmax sit on a
    kink where the two-sided difference estimates no derivative, so they
    are redrawn. Everything else must match to `rtol`.
    """
    _, cache = net.forward(params, x, weights="aux")
    grads = net.backward(cache, y)

    def loss_and_pattern():
        logits, c = net.forward(params, x, weights="aux")
        return net.loss(logits, y), pool_pattern(net, c)

    for k in range(len(params.aux)):
        tensors = [(params.aux[k], grads[k]["w"])]
        if params.bias[k] is not None:
            tensors.append((params.bias[k], grads[k]["b"]))
        for values, analytic in tensors:
            flat = values.ravel()
            aflat = analytic.ravel()
            order = gen.permutation(flat.size)
            checked = 0
            for idx in order:
                if checked >= min(n_coords, flat.size):
                    break
                orig = flat[idx]
                flat[idx] = orig + step
                up, pattern_up = loss_and_pattern()
                flat[idx] = orig - step
                down, pattern_down = loss_and_pattern()
                flat[idx] = orig
                smooth = all(
                    np.array_equal(a, b) for a, b in zip(pattern_up, pattern_down)
                )
                if not smooth:
                    continue
                checked += 1
                fd = (up - down) / (2 * step)
                denom = max(abs(fd), abs(aflat[idx]), 1e-8)
                assert abs(fd - aflat[idx]) / denom <= rtol, (
                    f"layer {k} coord {idx}: analytic {aflat[idx]}, fd {fd}"
                )
            assert checked >= min(n_coords, flat.size) * 0.9, (
                "too many kink coordinates; reseed the check"
            )
