"""Binary checkpoint container.

Little-endian layout::

    b"NFGL"                      magic
    u32 format_version
    u32 n, n bytes               config text (utf-8, ``key = value`` lines)
    u64 step
    u32 count
    count x {
        u32 n, n bytes           tensor name (utf-8)
        u8  dtype                0 = float32
        u32 ndim, ndim x u32     shape
        raw data                 row-major float32
    }

The same container (with empty config) stores precomputed feature pyramids
for the ``external`` encoder variant.
"""
from __future__ import annotations

import io
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .config import ModelConfig, from_text, to_text
from .errors import CheckpointError, ConfigError

MAGIC = b"NFGL"
FORMAT_VERSION = 1
DTYPE_F32 = 0


@dataclass
class Checkpoint:
    config_text: str
    tensors: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    step: int = 0
    format_version: int = FORMAT_VERSION

    @property
    def config(self) -> ModelConfig:
        try:
            return from_text(self.config_text)
        except ConfigError as exc:
            raise CheckpointError(f"embedded config is invalid: {exc}") from exc

    def state_dict(self) -> dict:
        return OrderedDict((k, torch.from_numpy(v.copy())) for k, v in self.tensors.items())


def to_bytes(ck: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", ck.format_version))
    cfg = ck.config_text.encode("utf-8")
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    buf.write(struct.pack("<Q", ck.step))
    buf.write(struct.pack("<I", len(ck.tensors)))
    for name, arr in ck.tensors.items():
        raw_name = name.encode("utf-8")
        a = np.ascontiguousarray(arr, dtype="<f4")
        buf.write(struct.pack("<I", len(raw_name)))
        buf.write(raw_name)
        buf.write(struct.pack("<BI", DTYPE_F32, a.ndim))
        buf.write(struct.pack(f"<{a.ndim}I", *a.shape))
        buf.write(a.tobytes())
    return buf.getvalue()


def from_bytes(data: bytes) -> Checkpoint:
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    def unpack(fmt):
        return struct.unpack(fmt, take(struct.calcsize(fmt)))

    if bytes(take(4)) != MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    (version,) = unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {version}")
    (n,) = unpack("<I")
    try:
        config_text = bytes(take(n)).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointError("config text is not utf-8") from exc
    (step,) = unpack("<Q")
    (count,) = unpack("<I")
    tensors = OrderedDict()
    for _ in range(count):
        (n,) = unpack("<I")
        name = bytes(take(n)).decode("utf-8")
        if name in tensors:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        dtype, ndim = unpack("<BI")
        if dtype != DTYPE_F32:
            raise CheckpointError(f"{name}: unsupported dtype code {dtype}")
        shape = unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(bytes(take(4 * size)), dtype="<f4").reshape(shape)
        tensors[name] = arr.astype(np.float32)
    if pos != len(view):
        raise CheckpointError("trailing bytes after the last tensor")
    return Checkpoint(config_text, tensors, step, version)


def from_model(model: torch.nn.Module, cfg: ModelConfig, step: int = 0) -> Checkpoint:
    tensors = OrderedDict(
        (k, v.detach().cpu().to(torch.float32).numpy().copy()) for k, v in model.state_dict().items())
    return Checkpoint(to_text(cfg), tensors, step)


def save(path, ck: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(ck))
    tmp.replace(path)


def load(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    return from_bytes(data)


def save_model(path, model, cfg: ModelConfig, step: int = 0) -> Checkpoint:
    ck = from_model(model, cfg, step)
    save(path, ck)
    return ck


def load_model(path_or_ck, seed: Optional[int] = 0):
    """Rebuild the network from a checkpoint; returns ``(model, checkpoint)``."""
    from .model import build_model

    ck = path_or_ck if isinstance(path_or_ck, Checkpoint) else load(path_or_ck)
    model = build_model(ck.config, seed)
    expected = set(model.state_dict())
    got = set(ck.tensors)
    if expected != got:
        missing, extra = sorted(expected - got), sorted(got - expected)
        raise CheckpointError(f"parameter mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
    model.load_state_dict(ck.state_dict())
    return model, ck


def save_pyramid(path, levels) -> None:
    """Store a 4-level pyramid (tensors of shape (C, h, w) or (1, C, h, w))."""
    tensors = OrderedDict()
    for i, t in enumerate(levels, start=1):
        a = t.detach().cpu().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)
        if a.ndim == 4:
            a = a[0]
        tensors[f"L{i}"] = a.astype(np.float32)
    save(path, Checkpoint("", tensors, 0))


def load_pyramid(path) -> list:
    ck = load(path)
    names = [f"L{i}" for i in range(1, 5)]
    if list(ck.tensors) != names:
        raise CheckpointError(f"{path}: expected tensors {names}, got {list(ck.tensors)}")
    return [torch.from_numpy(ck.tensors[n].copy())[None] for n in names]
