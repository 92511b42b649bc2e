"""Renyi-DP accounting for the binary randomized-response channel.

The channel keeps a bit with probability 1/2 + gamma and flips it with
probability 1/2 - gamma, gamma in [0, 1/2). One invocation per federated
round; rounds compose additively in the Renyi domain and the total is
converted to an (epsilon, delta) guarantee at the end.

All logarithms are natural. Everything here is a pure function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "RdpGuarantee",
    "DpBudget",
    "ALPHA_GRID",
    "rr_rdp",
    "compose_rounds",
    "rdp_to_dp",
    "g_eval",
    "calibrate_gamma",
    "dp_from_gamma",
    "self_consistent_epsilon",
]

# Fixed conversion orders; an adapted order is appended by dp_from_gamma.
ALPHA_GRID = (1.25, 1.5, 2.0, 3.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0)

GAMMA_TOL = 1e-9  # absolute bisection tolerance on gamma


@dataclass(frozen=True)
class RdpGuarantee:
    """A Renyi-DP claim: divergence at order `alpha` is at most `rho` nats."""

    alpha: float
    rho: float

    def __post_init__(self):
        if self.alpha < 1:
            raise ValueError(f"Renyi order must be >= 1, got {self.alpha}")
        if self.rho < 0:
            raise ValueError(f"rho must be >= 0, got {self.rho}")


@dataclass(frozen=True)
class DpBudget:
    """An (epsilon, delta) differential-privacy budget."""

    epsilon: float
    delta: float

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")


def _check_gamma(gamma: float) -> None:
    if not 0 <= gamma < 0.5:
        raise ValueError(f"flip bias gamma must be in [0, 0.5), got {gamma}")


def _log_sum_two(x1: float, x2: float) -> float:
    """log(exp(x1) + exp(x2)), stable for large exponents."""
    m = max(x1, x2)
    return m + math.log(math.exp(x1 - m) + math.exp(x2 - m))


def rr_rdp(gamma: float, alpha: float) -> RdpGuarantee:
    """Renyi privacy loss of one randomized-response invocation.

    For alpha > 1:
        rho = log((1/2+g)^a (1/2-g)^(1-a) + (1/2-g)^a (1/2+g)^(1-a)) / (a-1)
    For alpha = 1 the KL limit:
        rho = 2 g log((1/2+g)/(1/2-g))
    """
    _check_gamma(gamma)
    if alpha < 1:
        raise ValueError(f"Renyi order must be >= 1, got {alpha}")
    if gamma == 0:
        return RdpGuarantee(alpha, 0.0)
    p = 0.5 + gamma
    q = 0.5 - gamma
    lp = math.log(p)
    lq = math.log(q)
    if alpha == 1:
        rho = 2 * gamma * (lp - lq)
    else:
        rho = _log_sum_two(alpha * lp + (1 - alpha) * lq,
                           alpha * lq + (1 - alpha) * lp) / (alpha - 1)
    # guard against -0.0 from rounding at tiny gamma
    return RdpGuarantee(alpha, max(rho, 0.0))


def compose_rounds(per_round: RdpGuarantee, t: int) -> RdpGuarantee:
    """Additive composition of `t` identical per-round guarantees."""
    if t < 1:
        raise ValueError(f"round count must be >= 1, got {t}")
    return RdpGuarantee(per_round.alpha, t * per_round.rho)


def rdp_to_dp(g: RdpGuarantee, delta: float) -> DpBudget:
    """Convert an RDP claim to (epsilon, delta)-DP: eps = rho + log(1/delta)/(alpha-1)."""
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if g.alpha == 1:
        raise ValueError("conversion is undefined at order 1")
    return DpBudget(g.rho + math.log(1 / delta) / (g.alpha - 1), delta)


def g_eval(gamma: float, budget: DpBudget) -> float:
    """Calibration objective g(gamma) for a target budget.

    g(gamma) = log((1/2+g)^(1+k) (1/2-g)^(-k) + (1/2-g)^(1+k) (1/2+g)^(-k))
    with k = 2 log(1/delta) / epsilon. Equals (a*-1) * rr_rdp(gamma, a*).rho
    at a* = 1 + k; monotone increasing in gamma with g(0) = 0.
    """
    _check_gamma(gamma)
    if budget.epsilon <= 0:
        raise ValueError("target epsilon must be > 0 for calibration")
    if gamma == 0:
        return 0.0
    k = 2 * math.log(1 / budget.delta) / budget.epsilon
    p = 0.5 + gamma
    q = 0.5 - gamma
    lp = math.log(p)
    lq = math.log(q)
    return _log_sum_two((1 + k) * lp - k * lq, (1 + k) * lq - k * lp)


def calibrate_gamma(budget: DpBudget, t: int) -> float:
    """Largest flip bias whose t-round privacy loss fits the budget.

    Bisects g(gamma) <= log(1/delta)/t on [0, 1/2) to absolute tolerance
    GAMMA_TOL, returning the feasible side. gamma = 0 is always feasible.
    """
    if t < 1:
        raise ValueError(f"round count must be >= 1, got {t}")
    threshold = math.log(1 / budget.delta) / t
    lo = 0.0
    hi = 0.5 - GAMMA_TOL
    if g_eval(hi, budget) <= threshold:
        return hi
    while hi - lo > GAMMA_TOL:
        mid = 0.5 * (lo + hi)
        if g_eval(mid, budget) <= threshold:
            lo = mid
        else:
            hi = mid
    return lo


def self_consistent_epsilon(gamma: float, t: int, delta: float) -> float | None:
    """The epsilon at which the adapted order 1 + 2 log(1/delta)/eps certifies itself.

    Solves eps/2 = t * rho(gamma, 1 + 2 log(1/delta)/eps); the left side is
    increasing and the right side decreasing in eps, so the root is unique.
    Returns None for gamma = 0 (the adapted order degenerates; every order
    carries zero loss anyway).
    """
    _check_gamma(gamma)
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if t < 1:
        raise ValueError(f"round count must be >= 1, got {t}")
    if gamma == 0:
        return None
    big_l = math.log(1 / delta)
    p = 0.5 + gamma
    q = 0.5 - gamma
    # bracket: t*rho lies between t*KL (alpha->1) and t*log(p/q) (alpha->inf)
    lo = 2 * t * rr_rdp(gamma, 1.0).rho * 0.5
    hi = 2 * t * math.log(p / q)

    def excess(eps: float) -> float:
        return 2 * t * rr_rdp(gamma, 1 + 2 * big_l / eps).rho - eps

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * max(hi, 1.0):
            break
    return hi


def dp_from_gamma(gamma: float, t: int, delta: float) -> DpBudget:
    """Tightest (epsilon, delta) reportable after t rounds at flip bias gamma.

    Minimizes the converted epsilon over ALPHA_GRID plus the adapted order
    1 + 2 log(1/delta)/eps* at the self-consistent eps*, which reproduces
    the balanced-order bound; the reported value never exceeds it.
    """
    _check_gamma(gamma)
    orders = list(ALPHA_GRID)
    eps_star = self_consistent_epsilon(gamma, t, delta)
    if eps_star is not None:
        orders.append(1 + 2 * math.log(1 / delta) / eps_star)
    best = min(
        rdp_to_dp(compose_rounds(rr_rdp(gamma, a), t), delta).epsilon
        for a in orders
    )
    return DpBudget(best, delta)
