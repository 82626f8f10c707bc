"""Flat binary parameter checkpoints.

Layout (all integers little-endian uint32)::

    b"RLNC" | version | tensor count
    per tensor: name length | name (utf-8) | ndim | dims... | float32 LE values
"""
from __future__ import annotations

import struct

import numpy as np

MAGIC = b"RLNC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(params: dict) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, arr in params.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack("<%dI" % arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode(data: bytes) -> dict:
    if data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, data, pos)
        pos += size
        return vals

    version, count = take("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out = {}
    for _ in range(count):
        (nlen,) = take("<I")
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = take("<I")
        shape = take("<%dI" % ndim) if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        end = pos + 4 * size
        if end > len(data):
            raise CheckpointError(f"truncated tensor {name!r}")
        out[name] = np.frombuffer(data[pos:end], dtype="<f4").astype(np.float32).reshape(shape)
        pos = end
    if pos != len(data):
        raise CheckpointError("trailing bytes after last tensor")
    return out


def save(path, params: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(params))


def load(path) -> dict:
    with open(path, "rb") as fh:
        return decode(fh.read())
