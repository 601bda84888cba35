"""Binary checkpoint files.

Layout (little-endian)::

    b"KDASC"  u16 version
    u32 header_len  header (UTF-8 JSON)  u32 crc32(header)
    u32 n_blobs
    n_blobs x [u16 name_len  name  u32 byte_len  float32 data  u32 crc32(name + data)]

The JSON header carries the model spec, blob shapes, standardization
statistics and an echo of the training configuration.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import CorruptFileError, IncompatibleVersionError, SpecMismatchError
from .frontend import Standardization
from .zoo import ModelSpec

MAGIC = b"KDASC"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    spec: ModelSpec
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    standardization: Standardization | None = None
    train_config: dict = field(default_factory=dict)
    kind: str | None = None
    format_version: int = FORMAT_VERSION

    def header(self) -> dict:
        return {
            "format_version": self.format_version,
            "spec": self.spec.to_dict(),
            "kind": self.kind,
            "standardization": None if self.standardization is None else {
                "mean": list(self.standardization.mean),
                "std": list(self.standardization.std),
            },
            "train_config": self.train_config,
            "blobs": [
                {"name": k, "role": role, "shape": list(v.shape)}
                for role, d in (("param", self.params), ("buffer", self.buffers))
                for k, v in d.items()
            ],
        }


def save_checkpoint(ckpt: Checkpoint, path):
    header = json.dumps(ckpt.header(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<H", ckpt.format_version)]
    parts += [struct.pack("<I", len(header)), header, struct.pack("<I", zlib.crc32(header))]
    blobs = list(ckpt.params.items()) + list(ckpt.buffers.items())
    parts.append(struct.pack("<I", len(blobs)))
    for name, arr in blobs:
        nb = name.encode("utf-8")
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        parts += [struct.pack("<H", len(nb)), nb, struct.pack("<I", len(data)), data]
        parts.append(struct.pack("<I", zlib.crc32(nb + data)))
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise CorruptFileError(f"{self.path}: truncated while reading {what}", offset=self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(path, expected_spec: ModelSpec | None = None) -> Checkpoint:
    data = Path(path).read_bytes()
    r = _Reader(data, path)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CorruptFileError(f"{path}: not a checkpoint (bad magic)", offset=0)
    version = r.u16("version")
    if version != FORMAT_VERSION:
        raise IncompatibleVersionError(f"{path}: checkpoint format version {version}, this build reads {FORMAT_VERSION}")
    hlen = r.u32("header length")
    hstart = r.pos
    header_bytes = r.take(hlen, "header")
    if r.u32("header checksum") != zlib.crc32(header_bytes):
        raise CorruptFileError(f"{path}: header checksum mismatch", offset=hstart)
    header = json.loads(header_bytes.decode("utf-8"))
    spec = ModelSpec.from_dict(header["spec"])
    if expected_spec is not None:
        check_spec(spec, expected_spec)
    shapes = {b["name"]: (b["role"], tuple(b["shape"])) for b in header["blobs"]}
    n = r.u32("blob count")
    if n != len(shapes):
        raise CorruptFileError(f"{path}: header lists {len(shapes)} blobs, file has {n}", offset=r.pos - 4)
    params, buffers = {}, {}
    for _ in range(n):
        start = r.pos
        name = r.take(r.u16("blob name length"), "blob name").decode("utf-8")
        size = r.u32(f"blob {name!r} length")
        payload = r.take(size, f"blob {name!r}")
        if r.u32(f"blob {name!r} checksum") != zlib.crc32(name.encode("utf-8") + payload):
            raise CorruptFileError(f"{path}: checksum mismatch in blob {name!r}", offset=start)
        if name not in shapes:
            raise CorruptFileError(f"{path}: blob {name!r} not declared in header", offset=start)
        role, shape = shapes[name]
        arr = np.frombuffer(payload, dtype="<f4").astype(np.float32)
        if arr.size != int(np.prod(shape)):
            raise CorruptFileError(f"{path}: blob {name!r} has {arr.size} values, header says {shape}", offset=start)
        (params if role == "param" else buffers)[name] = arr.reshape(shape)
    if r.pos != len(data):
        raise CorruptFileError(f"{path}: {len(data) - r.pos} trailing bytes", offset=r.pos)
    std = header.get("standardization")
    return Checkpoint(
        spec=spec,
        params=params,
        buffers=buffers,
        standardization=None if std is None else Standardization(tuple(std["mean"]), tuple(std["std"])),
        train_config=header.get("train_config", {}),
        kind=header.get("kind"),
        format_version=version,
    )


def check_spec(found: ModelSpec, expected: ModelSpec):
    """Raise :class:`SpecMismatchError` naming the first differing layer."""
    if tuple(found.input_shape) != tuple(expected.input_shape):
        raise SpecMismatchError(f"input shape {found.input_shape} != expected {expected.input_shape}")
    for i, (a, b) in enumerate(zip(found.layers, expected.layers)):
        if a != b:
            raise SpecMismatchError(f"layer {i:02d}: checkpoint has {a.to_dict()}, expected {b.to_dict()}")
    if len(found.layers) != len(expected.layers):
        i = min(len(found.layers), len(expected.layers))
        raise SpecMismatchError(f"layer {i:02d}: checkpoint has {len(found.layers)} layers, expected {len(expected.layers)}")
    if found.embedding_layer_index != expected.embedding_layer_index:
        raise SpecMismatchError("embedding layer index differs")
