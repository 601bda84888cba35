"""Student and teacher architectures as declarative :class:`ModelSpec` values."""

from __future__ import annotations

import json
from dataclasses import dataclass

from .exceptions import ConfigError, ShapeError
from .nn.spec import (
    BN,
    GAP,
    RELU,
    SOFTMAX,
    Conv,
    Dense,
    Drop,
    LayerKind,
    LayerSpec,
    Pool,
    Residual,
    shape_chain,
)

INPUT_SHAPE = (128, 128, 3)
EMBEDDING_DIM = 64
N_CLASSES = 10


@dataclass(frozen=True)
class ModelSpec:
    name: str
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, ...] = INPUT_SHAPE
    embedding_layer_index: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        shapes = shape_chain(self.layers, self.input_shape)
        idx = self.embedding_layer_index
        if idx is not None:
            if self.layers[idx].kind is not LayerKind.DENSE or shapes[idx] != (EMBEDDING_DIM,):
                raise ShapeError(f"embedding layer {idx} must be a {EMBEDDING_DIM}-unit DENSE layer")
            if idx + 1 >= len(self.layers) or self.layers[idx + 1].kind is not LayerKind.RELU:
                raise ShapeError("embedding layer must be followed by its ReLU")

    @property
    def shapes(self):
        return shape_chain(self.layers, self.input_shape)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "embedding_layer_index": self.embedding_layer_index,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d) -> ModelSpec:
        return cls(
            name=d["name"],
            layers=tuple(LayerSpec.from_dict(x) for x in d["layers"]),
            input_shape=tuple(d["input_shape"]),
            embedding_layer_index=d["embedding_layer_index"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def build_student() -> ModelSpec:
    """Low-complexity student: four 2x2 conv stages and a 64/10 dense head.

    Each conv stage is Conv -> ReLU -> BN -> pool -> dropout. The third stage
    keeps 16 channels; the GAP output is 32-d via the fourth conv.
    """
    layers = []
    for units, pool, rate in ((16, Pool(2, 2), 0.10), (16, Pool(2, 2), 0.15), (16, Pool(2, 2), 0.20), (32, GAP, 0.25)):
        layers += [Conv(2, 2, units), RELU, BN, pool, Drop(rate)]
    emb = len(layers)
    layers += [Dense(EMBEDDING_DIM), RELU, Drop(0.30), Dense(N_CLASSES), SOFTMAX]
    return ModelSpec("student", tuple(layers), INPUT_SHAPE, emb)


@dataclass(frozen=True)
class TeacherConfig:
    """Hyperparameters of the residual stand-in backbone.

    ``stem_pool`` average-pools the input before the first block; 1 keeps
    the full 128x128 resolution.
    """

    channels: tuple[int, ...] = (32, 64, 128, 256)
    stem_pool: int = 1
    dropout: float = 0.3

    @property
    def n_blocks(self):
        return len(self.channels)


def build_teacher(config: TeacherConfig | None = None) -> ModelSpec:
    config = config or TeacherConfig()
    if not config.channels:
        raise ConfigError("teacher needs at least one residual block")
    side = INPUT_SHAPE[0]
    if config.stem_pool < 1 or side % config.stem_pool:
        raise ConfigError(f"stem_pool {config.stem_pool} must divide the input side {side}")
    side //= config.stem_pool
    if side < 2 ** config.n_blocks:
        raise ConfigError(
            f"{config.n_blocks} pooled blocks collapse a {side}x{side} map below 1x1 before GAP"
        )
    layers: list[LayerSpec] = []
    if config.stem_pool > 1:
        layers.append(Pool(config.stem_pool, config.stem_pool))
    for ch in config.channels:
        layers += [
            Conv(3, 3, ch), RELU, BN,
            Residual(Conv(3, 3, ch), RELU, BN),
            Pool(2, 2),
        ]
    layers.append(GAP)
    emb = len(layers)
    layers += [Dense(EMBEDDING_DIM), RELU, Drop(config.dropout), Dense(N_CLASSES), SOFTMAX]
    name = "teacher-" + "-".join(str(c) for c in config.channels) + f"-s{config.stem_pool}"
    return ModelSpec(name, tuple(layers), INPUT_SHAPE, emb)
