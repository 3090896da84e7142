"""Little-endian binary checkpoints of named float32 tensors.

Layout::

    b"VVPT"  u32 version  u32 tensor_count
    repeated: u16 name_len, utf-8 name, u8 rank, u32 dims[rank], f32 data (row-major)
    u64 step  f32 running_loss
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .vnn import VfgnParams

MAGIC = b"VVPT"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


@dataclass
class Checkpoint:
    tensors: list[tuple[str, np.ndarray]]
    step: int = 0
    running_loss: float = 0.0
    train_config: object = None
    version: int = VERSION
    history: list[float] = field(default_factory=list, repr=False)

    @classmethod
    def from_params(cls, params: VfgnParams, step: int = 0, running_loss: float = 0.0,
                    train_config=None) -> "Checkpoint":
        named = [(k, t.data.copy()) for k, t in params.named_tensors()]
        return cls(named, step, running_loss, train_config)

    def params(self, slope: float = 0.1) -> VfgnParams:
        return VfgnParams.from_named(dict(self.tensors), slope=slope)


def encode(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(ckpt.tensors))]
    for name, arr in ckpt.tensors:
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise CheckpointError(f"tensor {name!r} cannot be encoded")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    parts.append(struct.pack("<Qf", int(ckpt.step), float(ckpt.running_loss)))
    return b"".join(parts)


def decode(buf: bytes) -> Checkpoint:
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError("truncated checkpoint")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise CheckpointError("bad magic, not a VVPT checkpoint")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    tensors = []
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        try:
            name = take(nlen).decode("utf-8")
        except UnicodeDecodeError as err:
            raise CheckpointError("tensor name is not valid UTF-8") from err
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = 1
        for d in dims:
            n *= d
        if 4 * n > len(buf) - pos:
            raise CheckpointError(f"tensor {name!r} shape {dims} overflows the file")
        arr = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
        tensors.append((name, arr))
    step, loss = struct.unpack("<Qf", take(12))
    if pos != len(buf):
        raise CheckpointError("trailing bytes after checkpoint")
    return Checkpoint(tensors, int(step), float(loss))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    data = encode(ckpt)
    with open(path, "wb") as fh:
        fh.write(data)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode(fh.read())
