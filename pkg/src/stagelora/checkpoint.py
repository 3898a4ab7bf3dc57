"""Binary checkpoint format for staged classifier networks.

Layout (all integers little-endian)::

    b"SLRA"                       magic
    u32  version                  currently 1
    u64  payload length           bytes following this field
    u8   stage id
    u32  label count, then per label: u32 byte length + UTF-8 bytes
    u32  metadata length + UTF-8 JSON (stage history, seeds)
    u32  tensor count, then per tensor:
         u32 name length + UTF-8 name, u64 rows, u64 cols,
         rows*cols float64 values in row-major order

Tensor values are written as raw IEEE-754 doubles, so a save/load round
trip is bit-exact.
"""

from __future__ import annotations

import json
import os
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import (
    CheckpointFormatError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    DimensionError,
    StageLoraError,
)
from .fileio import atomic_write_bytes
from .lora import AdaptedLinear, LoraAdapter
from .model import ClassifierNet

MAGIC = b"SLRA"
VERSION = 1
_LAYER_RE = re.compile(r"^backbone\.(\d+)\.(weight|bias|lora_A|lora_B|lora_scale)$")


@dataclass
class Checkpoint:
    net: ClassifierNet
    stage_id: int
    history: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def label_set(self) -> tuple[str, ...]:
        return self.net.active_labels


def named_tensors(net: ClassifierNet) -> list[tuple[str, np.ndarray]]:
    out = []
    for i, layer in enumerate(net.backbone):
        out.append((f"backbone.{i}.weight", layer.weight.value))
        out.append((f"backbone.{i}.bias", layer.bias.value))
        if layer.adapter is not None:
            out.append((f"backbone.{i}.lora_A", layer.adapter.A.value))
            out.append((f"backbone.{i}.lora_B", layer.adapter.B.value))
            out.append((f"backbone.{i}.lora_scale", np.array([[layer.adapter.scale]])))
    out.append(("head.weight", net.head.weight.value))
    out.append(("head.bias", net.head.bias.value))
    return out


def _str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def dumps(ckpt: Checkpoint) -> bytes:
    body = bytearray()
    body += struct.pack("<B", ckpt.stage_id)
    body += struct.pack("<I", len(ckpt.label_set))
    for label in ckpt.label_set:
        body += _str(label)
    meta = {"history": ckpt.history, **ckpt.meta}
    body += _str(json.dumps(meta, sort_keys=True, separators=(",", ":")))
    tensors = named_tensors(ckpt.net)
    body += struct.pack("<I", len(tensors))
    for name, value in tensors:
        rows, cols = value.shape
        body += _str(name)
        body += struct.pack("<QQ", rows, cols)
        body += np.ascontiguousarray(value, dtype="<f8").tobytes()
    return MAGIC + struct.pack("<IQ", VERSION, len(body)) + bytes(body)


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    atomic_write_bytes(path, dumps(ckpt))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            # the payload length was already verified, so overrunning it means
            # a declared size inside the payload is wrong
            raise CheckpointShapeError(
                f"declared sizes overrun the payload at byte {self.pos} (need {n}, have {len(self.buf) - self.pos})"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointFormatError(f"invalid UTF-8 string: {exc}") from None


def loads(data: bytes) -> Checkpoint:
    if len(data) < len(MAGIC):
        if MAGIC.startswith(data):
            raise CheckpointTruncatedError(f"file is {len(data)} bytes, shorter than the header")
        raise CheckpointFormatError("not a checkpoint file (bad magic)")
    if data[:4] != MAGIC:
        raise CheckpointFormatError(f"not a checkpoint file (magic {data[:4]!r})")
    if len(data) < 16:
        raise CheckpointTruncatedError(f"file is {len(data)} bytes, header needs 16")
    version, payload_len = struct.unpack("<IQ", data[4:16])
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version} (expected {VERSION})")
    payload = data[16:]
    if len(payload) < payload_len:
        raise CheckpointTruncatedError(f"payload has {len(payload)} of {payload_len} declared bytes")
    if len(payload) > payload_len:
        raise CheckpointShapeError(f"{len(payload) - payload_len} bytes beyond the declared payload")

    r = _Reader(payload)
    (stage_id,) = r.unpack("<B")
    (n_labels,) = r.unpack("<I")
    labels = tuple(r.string() for _ in range(n_labels))
    try:
        meta = json.loads(r.string())
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(f"metadata is not JSON: {exc.msg}") from None
    (n_tensors,) = r.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        name = r.string()
        rows, cols = r.unpack("<QQ")
        nbytes = rows * cols * 8
        if nbytes > len(payload) - r.pos:
            raise CheckpointShapeError(f"tensor {name!r} declares {rows}x{cols}, larger than the remaining payload")
        arr = np.frombuffer(r.take(nbytes), dtype="<f8").astype(np.float64).reshape(rows, cols)
        if name in tensors:
            raise CheckpointShapeError(f"duplicate tensor {name!r}")
        tensors[name] = arr
    if r.pos != len(payload):
        raise CheckpointShapeError(f"{len(payload) - r.pos} unread bytes after the last tensor")

    history = meta.pop("history", [])
    return Checkpoint(_build(tensors, labels), stage_id, history, meta)


def _build(tensors: dict[str, np.ndarray], labels: tuple[str, ...]) -> ClassifierNet:
    layers: dict[int, dict[str, np.ndarray]] = {}
    for name, arr in tensors.items():
        m = _LAYER_RE.match(name)
        if m:
            layers.setdefault(int(m.group(1)), {})[m.group(2)] = arr
        elif name not in ("head.weight", "head.bias"):
            raise CheckpointShapeError(f"unexpected tensor {name!r}")
    if "head.weight" not in tensors or "head.bias" not in tensors:
        raise CheckpointShapeError("checkpoint has no head tensors")
    if sorted(layers) != list(range(len(layers))):
        raise CheckpointShapeError(f"backbone layer indices are not contiguous: {sorted(layers)}")
    try:
        backbone = []
        for i in range(len(layers)):
            parts = layers[i]
            if "weight" not in parts or "bias" not in parts:
                raise CheckpointShapeError(f"backbone.{i} is missing weight or bias")
            adapter_keys = {"lora_A", "lora_B", "lora_scale"} & parts.keys()
            adapter = None
            if adapter_keys:
                if len(adapter_keys) != 3:
                    raise CheckpointShapeError(f"backbone.{i} has a partial adapter")
                if parts["lora_scale"].shape != (1, 1):
                    raise CheckpointShapeError(f"backbone.{i}.lora_scale must be 1x1")
                adapter = LoraAdapter(
                    ad.leaf(parts["lora_A"], requires_grad=True, name="lora_A"),
                    ad.leaf(parts["lora_B"], requires_grad=True, name="lora_B"),
                    float(parts["lora_scale"][0, 0]),
                )
                if adapter.A.shape[0] != adapter.B.shape[1]:
                    raise CheckpointShapeError(f"backbone.{i} adapter ranks disagree")
            backbone.append(
                AdaptedLinear(
                    ad.leaf(parts["weight"], name=f"backbone.{i}.weight"),
                    ad.leaf(parts["bias"], name=f"backbone.{i}.bias"),
                    adapter=adapter,
                    name=f"backbone.{i}",
                )
            )
        head = AdaptedLinear(
            ad.leaf(tensors["head.weight"], name="head.weight"),
            ad.leaf(tensors["head.bias"], name="head.bias"),
            trainable_base=True,
            name="head",
        )
        return ClassifierNet(backbone, head, labels)
    except (DimensionError, StageLoraError) as exc:
        if isinstance(exc, CheckpointShapeError):
            raise
        raise CheckpointShapeError(f"tensor shapes do not form a network: {exc}") from None


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    return loads(Path(path).read_bytes())
