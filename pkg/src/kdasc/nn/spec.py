"""Declarative layer descriptions and static shape inference."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from ..exceptions import ShapeError


class LayerKind(str, Enum):
    CONV2D = "CONV2D"
    BATCHNORM = "BATCHNORM"
    RELU = "RELU"
    AVGPOOL = "AVGPOOL"
    GLOBALAVGPOOL = "GLOBALAVGPOOL"
    DROPOUT = "DROPOUT"
    DENSE = "DENSE"
    SOFTMAX = "SOFTMAX"
    # identity-shortcut wrapper around ``body``; used by the teacher backbone
    RESIDUAL = "RESIDUAL"


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a sequential network.

    Only the fields relevant to ``kind`` are read: ``kernel`` and ``units``
    for CONV2D, ``units`` for DENSE, ``pool`` for AVGPOOL, ``rate`` for
    DROPOUT and ``body`` for RESIDUAL.
    """

    kind: LayerKind
    kernel: tuple[int, int] | None = None
    units: int | None = None
    pool: tuple[int, int] | None = None
    rate: float = 0.0
    body: tuple[LayerSpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        if self.kernel is not None:
            object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
            if min(self.kernel) < 1:
                raise ValueError(f"kernel extents must be >= 1, got {self.kernel}")
        if self.pool is not None:
            object.__setattr__(self, "pool", tuple(int(p) for p in self.pool))
            if min(self.pool) < 1:
                raise ValueError(f"pool extents must be >= 1, got {self.pool}")
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")
        if self.kind in (LayerKind.CONV2D, LayerKind.DENSE) and (self.units or 0) < 1:
            raise ValueError(f"{self.kind.value} needs a positive unit count")
        if self.kind is LayerKind.CONV2D and self.kernel is None:
            raise ValueError("CONV2D needs a kernel")
        if self.kind is LayerKind.AVGPOOL and self.pool is None:
            raise ValueError("AVGPOOL needs a pool size")

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind.value}
        if self.kernel is not None:
            d["kernel"] = list(self.kernel)
        if self.units is not None:
            d["units"] = self.units
        if self.pool is not None:
            d["pool"] = list(self.pool)
        if self.kind is LayerKind.DROPOUT:
            d["rate"] = self.rate
        if self.body:
            d["body"] = [b.to_dict() for b in self.body]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> LayerSpec:
        return cls(
            kind=LayerKind(d["kind"]),
            kernel=tuple(d["kernel"]) if "kernel" in d else None,
            units=d.get("units"),
            pool=tuple(d["pool"]) if "pool" in d else None,
            rate=float(d.get("rate", 0.0)),
            body=tuple(cls.from_dict(b) for b in d.get("body", ())),
        )


# Convenience constructors, mostly for readable architecture tables.
def Conv(kh, kw, units):
    return LayerSpec(LayerKind.CONV2D, kernel=(kh, kw), units=units)


def Dense(units):
    return LayerSpec(LayerKind.DENSE, units=units)


def Pool(ph, pw):
    return LayerSpec(LayerKind.AVGPOOL, pool=(ph, pw))


def Drop(rate):
    return LayerSpec(LayerKind.DROPOUT, rate=rate)


def Residual(*body):
    return LayerSpec(LayerKind.RESIDUAL, body=tuple(body))


RELU = LayerSpec(LayerKind.RELU)
BN = LayerSpec(LayerKind.BATCHNORM)
GAP = LayerSpec(LayerKind.GLOBALAVGPOOL)
SOFTMAX = LayerSpec(LayerKind.SOFTMAX)


def output_shape(layer: LayerSpec, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Per-sample output shape of ``layer`` given its per-sample input shape."""
    kind = layer.kind
    if kind is LayerKind.CONV2D:
        if len(in_shape) != 3:
            raise ShapeError(f"CONV2D expects H x W x C input, got {in_shape}")
        return (in_shape[0], in_shape[1], layer.units)
    if kind is LayerKind.DENSE:
        if len(in_shape) != 1:
            raise ShapeError(f"DENSE expects a vector input, got {in_shape}")
        return (layer.units,)
    if kind is LayerKind.AVGPOOL:
        if len(in_shape) != 3:
            raise ShapeError(f"AVGPOOL expects H x W x C input, got {in_shape}")
        h, w, c = in_shape
        ph, pw = layer.pool
        if h % ph or w % pw:
            raise ShapeError(f"pool {layer.pool} does not divide spatial extent {(h, w)}")
        return (h // ph, w // pw, c)
    if kind is LayerKind.GLOBALAVGPOOL:
        if len(in_shape) != 3:
            raise ShapeError(f"GLOBALAVGPOOL expects H x W x C input, got {in_shape}")
        return (in_shape[2],)
    if kind is LayerKind.RESIDUAL:
        out = in_shape
        for sub in layer.body:
            out = output_shape(sub, out)
        if out != tuple(in_shape):
            raise ShapeError(f"residual body maps {in_shape} to {out}; identity shortcut needs equal shapes")
        return out
    if kind is LayerKind.SOFTMAX and len(in_shape) != 1:
        raise ShapeError(f"SOFTMAX expects a vector input, got {in_shape}")
    return tuple(in_shape)


def shape_chain(layers, input_shape) -> list[tuple[int, ...]]:
    """Output shape after every layer; raises ShapeError at the first break."""
    shapes = []
    cur = tuple(input_shape)
    for i, layer in enumerate(layers):
        try:
            cur = output_shape(layer, cur)
        except ShapeError as exc:
            raise ShapeError(f"layer {i} ({layer.kind.value}): {exc}") from None
        shapes.append(cur)
    return shapes
