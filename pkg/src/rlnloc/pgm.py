"""Binary PGM (P5, maxval 255) reading and writing.

Label masks are stored with their raw label values (0..3); gray images are
quantized to ``round(v * 255)``.
"""
from __future__ import annotations

import os

import numpy as np

from .imaging import N_LABELS, LabelRangeError


class PGMError(ValueError):
    pass


def encode(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise PGMError("PGM payload must be a 2D uint8 array")
    h, w = arr.shape
    return b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(arr).tobytes()


def decode(data: bytes, name: str = "<bytes>") -> np.ndarray:
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < 4:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PGMError(f"{name}: truncated header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise PGMError(f"{name}: not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise PGMError(f"{name}: malformed header") from None
    if maxval != 255:
        raise PGMError(f"{name}: unsupported maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    payload = data[pos:pos + w * h]
    if len(payload) != w * h:
        raise PGMError(f"{name}: expected {w * h} pixel bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).copy()


def write_pgm(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(arr))


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read(), name=os.fspath(path))


def write_mask(path, mask: np.ndarray) -> None:
    mask = np.asarray(mask)
    if mask.size and mask.max() >= N_LABELS:
        raise LabelRangeError(f"{path}: label value {int(mask.max())} outside 0..3")
    write_pgm(path, mask.astype(np.uint8))


def read_mask(path) -> np.ndarray:
    arr = read_pgm(path)
    if arr.size and arr.max() >= N_LABELS:
        raise LabelRangeError(f"{os.fspath(path)}: pixel value {int(arr.max())} outside label range 0..3")
    return arr


def quantize_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_image(path, img: np.ndarray) -> None:
    write_pgm(path, quantize_image(img))


def read_image(path) -> np.ndarray:
    return (read_pgm(path).astype(np.float32) / np.float32(255.0))
