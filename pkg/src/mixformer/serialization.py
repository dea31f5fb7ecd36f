"""The MIXF tensor container.

Layout (all integers u32 little-endian)::

    b"MIXF" | version | count | count * (name_len | name utf-8 | rank | dims... | float32 LE data)

Tensors are written in the order given; ``save_model`` uses the model's
parameter order followed by its buffers.
"""
from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"MIXF"
VERSION = 1
_U32 = struct.Struct("<I")


class FormatError(ValueError):
    pass


def encode(tensors: dict) -> bytes:
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value, dtype="<f4")
        raw = name.encode("utf-8")
        parts += [_U32.pack(len(raw)), raw, _U32.pack(arr.ndim)]
        parts += [_U32.pack(d) for d in arr.shape]
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def decode(blob: bytes) -> dict:
    """Parse a MIXF blob into ``{name: float64 array}`` (insertion-ordered)."""
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise FormatError(f"truncated file: need {n} bytes at offset {pos}, have {len(view) - pos}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    def u32() -> int:
        return _U32.unpack(take(4))[0]

    if bytes(take(4)) != MAGIC:
        raise FormatError("not a MIXF file (bad magic)")
    version = u32()
    if version != VERSION:
        raise FormatError(f"unsupported MIXF version {version}")
    tensors = {}
    for _ in range(u32()):
        try:
            name = bytes(take(u32())).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"tensor name is not UTF-8: {exc}") from exc
        if name in tensors:
            raise FormatError(f"duplicate tensor name {name!r}")
        shape = tuple(u32() for _ in range(u32()))
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(take(4 * count), dtype="<f4")
        tensors[name] = data.reshape(shape).astype(np.float64)
    if pos != len(view):
        raise FormatError(f"{len(view) - pos} trailing bytes after last tensor")
    return tensors


def save_tensors(path: str | os.PathLike, tensors: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(tensors))


def load_tensors(path: str | os.PathLike) -> dict:
    with open(path, "rb") as fh:
        return decode(fh.read())


def save_model(path: str | os.PathLike, model) -> None:
    save_tensors(path, model.state_dict())


def load_model(path: str | os.PathLike, model) -> None:
    """Load weights into ``model``; names and shapes must match exactly."""
    model.load_state_dict(load_tensors(path))


def save_tensor(path: str | os.PathLike, array, name: str = "tensor") -> None:
    save_tensors(path, {name: array})


def load_tensor(path: str | os.PathLike) -> np.ndarray:
    tensors = load_tensors(path)
    if len(tensors) != 1:
        raise FormatError(f"expected a single tensor, found {len(tensors)}")
    return next(iter(tensors.values()))
