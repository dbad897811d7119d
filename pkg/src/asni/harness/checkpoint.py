"""Versioned little-endian binary checkpoints.

Layout (all integers little-endian)::

    b"ASNICKPT"  u32 version
    u32 n_tensors, then per tensor:
        u16 name_len, name (utf-8), u8 prunable, u8 ndim, u32 dims[ndim], f32 payload
    u8 has_mask [u64 d, packed bits (little bit order)]
    u8 has_centroids [u32 L, per layer: u16 name_len, name, f32 c_plus, f32 c_minus]
    u32 json_len, json (utf-8, sorted keys): config echo, layer specs, input shape, meta
    i64 seed
    u32 crc32 of every preceding byte
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..amenable import CentroidSet, LayerCentroids
from ..mask import Mask, layout
from ..tensor import DTYPE, LayerSpec, ParamStore

MAGIC = b"ASNICKPT"
VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    params: ParamStore
    spec: list[LayerSpec]
    input_shape: tuple[int, ...]
    mask: Mask | None = None
    centroids: CentroidSet | None = None
    config: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    seed: int = 0


def encode_centroids(cs: CentroidSet) -> bytes:
    """The centroid table as stored: names plus exactly 2L float32 values."""
    out = [struct.pack("<I", len(cs))]
    for lc in cs.layers:
        name = lc.name.encode("utf-8")
        out.append(struct.pack("<H", len(name)) + name)
        out.append(np.array([lc.c_plus, lc.c_minus], dtype="<f4").tobytes())
    return b"".join(out)


def to_bytes(ckpt: Checkpoint) -> bytes:
    out = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(ckpt.params))]
    for e in ckpt.params:
        name = e.name.encode("utf-8")
        t = e.tensor
        out.append(struct.pack("<H", len(name)) + name)
        out.append(struct.pack("<BB", int(e.prunable), t.ndim))
        out.append(struct.pack(f"<{t.ndim}I", *t.shape))
        out.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    if ckpt.mask is None:
        out.append(b"\x00")
    else:
        ckpt.mask.check_compatible(ckpt.params)
        out.append(b"\x01" + struct.pack("<Q", len(ckpt.mask)))
        out.append(np.packbits(ckpt.mask.bits, bitorder="little").tobytes())
    if ckpt.centroids is None:
        out.append(b"\x00")
    else:
        out.append(b"\x01" + encode_centroids(ckpt.centroids))
    doc = {
        "config": ckpt.config,
        "meta": ckpt.meta,
        "spec": [layer.to_dict() for layer in ckpt.spec],
        "input_shape": list(ckpt.input_shape),
    }
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out.append(struct.pack("<I", len(blob)) + blob)
    out.append(struct.pack("<q", ckpt.seed))
    body = b"".join(out)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptCheckpointError("truncated checkpoint")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def from_bytes(buf: bytes) -> Checkpoint:
    if len(buf) < len(MAGIC) + 8 or buf[:len(MAGIC)] != MAGIC:
        raise CorruptCheckpointError("not a checkpoint (bad magic or truncated header)")
    (version,) = struct.unpack("<I", buf[len(MAGIC):len(MAGIC) + 4])
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, expected {VERSION}")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptCheckpointError("checksum mismatch (corrupt or truncated payload)")
    r = _Reader(body)
    r.take(len(MAGIC) + 4)
    params = ParamStore()
    (n_tensors,) = r.unpack("<I")
    for _ in range(n_tensors):
        name = r.name()
        prunable, ndim = r.unpack("<BB")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape))
        data = np.frombuffer(r.take(4 * size), dtype="<f4").astype(DTYPE).reshape(shape)
        layer_index = int(name.split(".")[0].removeprefix("layer")) if name.startswith("layer") else -1
        params.add(name, data, bool(prunable), layer_index)
    mask = None
    if r.take(1) == b"\x01":
        (d,) = r.unpack("<Q")
        bits = np.unpackbits(np.frombuffer(r.take((d + 7) // 8), dtype=np.uint8),
                             count=d, bitorder="little").astype(bool)
        names, offsets, shapes = layout(params)
        try:
            mask = Mask(bits, names, offsets, shapes)
        except ValueError as exc:
            raise CorruptCheckpointError(str(exc)) from None
    centroids = None
    if r.take(1) == b"\x01":
        (n_layers,) = r.unpack("<I")
        layers = []
        for _ in range(n_layers):
            name = r.name()
            c_plus, c_minus = np.frombuffer(r.take(8), dtype="<f4").astype(DTYPE)
            layers.append(LayerCentroids(name, c_plus, c_minus, None, None))
        centroids = CentroidSet(layers)
    (blob_len,) = r.unpack("<I")
    try:
        doc = json.loads(r.take(blob_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"bad metadata block: {exc}") from None
    (seed,) = r.unpack("<q")
    if r.pos != len(body):
        raise CorruptCheckpointError("trailing bytes after checkpoint payload")
    spec = [LayerSpec.from_dict(d) for d in doc["spec"]]
    return Checkpoint(params, spec, tuple(doc["input_shape"]), mask, centroids,
                      doc["config"], doc["meta"], seed)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from None
    return from_bytes(buf)
