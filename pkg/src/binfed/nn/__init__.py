"""Binary neural network training engine."""

from .binarize import clip_params, sign, sto_sign
from .network import LayerSpec, Network, NetworkParams, build_paper_model
from .optim import AdamState, LrSchedule, adam_step, sgd_step

__all__ = [
    "clip_params",
    "sign",
    "sto_sign",
    "LayerSpec",
    "Network",
    "NetworkParams",
    "build_paper_model",
    "AdamState",
    "LrSchedule",
    "adam_step",
    "sgd_step",
]
