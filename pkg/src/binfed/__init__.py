"""Federated training of binary neural networks with client-level
differential privacy via randomized response."""

from .accountant import (
    DpBudget,
    RdpGuarantee,
    calibrate_gamma,
    compose_rounds,
    dp_from_gamma,
    g_eval,
    rdp_to_dp,
    rr_rdp,
)
from .protocol import FederatedData, RoundConfig, RunMetrics, run_training
from .randresp import expected_value, rr_apply
from .rng import NoiseStream, stream

__version__ = "0.1.0"

__all__ = [
    "DpBudget",
    "RdpGuarantee",
    "calibrate_gamma",
    "compose_rounds",
    "dp_from_gamma",
    "g_eval",
    "rdp_to_dp",
    "rr_rdp",
    "FederatedData",
    "RoundConfig",
    "RunMetrics",
    "run_training",
    "expected_value",
    "rr_apply",
    "NoiseStream",
    "stream",
    "__version__",
]
