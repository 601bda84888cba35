"""Minimal numpy neural-network engine with hand-written gradients."""

from .layers import (
    AvgPool,
    BatchNorm,
    Conv2D,
    Dense,
    Dropout,
    GlobalAvgPool,
    ReLU,
    Residual,
    Softmax,
)
from .losses import cross_entropy, mse
from .mixup import MixupPair, mix_batch, mixup
from .network import Network, seed_streams
from .optim import Adam, AdamState, adam_step
from .spec import LayerKind, LayerSpec

__all__ = [
    "Adam",
    "AdamState",
    "AvgPool",
    "BatchNorm",
    "Conv2D",
    "Dense",
    "Dropout",
    "GlobalAvgPool",
    "LayerKind",
    "LayerSpec",
    "MixupPair",
    "Network",
    "ReLU",
    "Residual",
    "Softmax",
    "adam_step",
    "cross_entropy",
    "mix_batch",
    "mixup",
    "mse",
    "seed_streams",
]
