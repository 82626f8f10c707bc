"""Masks, images, planar affine geometry and the two similarity measures.

Conventions used throughout the package:

* A label mask is a 2D ``uint8`` array indexed ``[row, col]`` holding labels
  0 (background), 1 (CCA), 2 (thyroid) and 3 (trachea).
* A gray image is a 2D ``float32`` array with values in [0, 1].
* Points are ``(x, y)`` with x the column and y the row; pixel centers sit at
  integer coordinates and the origin is the top-left pixel.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

N_LABELS = 4
FOREGROUND = (1, 2, 3)
LABEL_NAMES = {0: "background", 1: "cca", 2: "thyroid", 3: "trachea"}


class InvalidTransformError(ValueError):
    pass


class EmptyMaskError(ValueError):
    pass


class LabelRangeError(ValueError):
    pass


def as_mask(mask) -> np.ndarray:
    """Validate and return ``mask`` as a C-contiguous uint8 label array."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"label mask must be 2D, got shape {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() >= N_LABELS):
        raise LabelRangeError(f"labels must lie in 0..{N_LABELS - 1}")
    return np.ascontiguousarray(arr, dtype=np.uint8)


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


@dataclass(frozen=True)
class AffineTransform2D:
    """Forward planar affine map ``p -> linear @ p + translation``."""

    linear: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        lin = np.array(self.linear, dtype=np.float64).reshape(2, 2)
        tr = np.array(self.translation, dtype=np.float64).reshape(2)
        lin.setflags(write=False)
        tr.setflags(write=False)
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "translation", tr)

    @classmethod
    def identity(cls) -> "AffineTransform2D":
        return cls(np.eye(2), np.zeros(2))

    @classmethod
    def from_matrix(cls, m) -> "AffineTransform2D":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:2, :2], m[:2, 2])

    def matrix(self) -> np.ndarray:
        """3x3 homogeneous matrix."""
        m = np.eye(3)
        m[:2, :2] = self.linear
        m[:2, 2] = self.translation
        return m

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.linear))

    def is_invertible(self) -> bool:
        return abs(self.det) > 1e-6

    def inverse(self) -> "AffineTransform2D":
        if not self.is_invertible():
            raise InvalidTransformError(f"non-invertible transform (det={self.det:.3g})")
        inv = np.linalg.inv(self.linear)
        return AffineTransform2D(inv, -inv @ self.translation)

    def __eq__(self, other):
        if not isinstance(other, AffineTransform2D):
            return NotImplemented
        return bool(
            np.array_equal(self.linear, other.linear)
            and np.array_equal(self.translation, other.translation)
        )

    def __hash__(self):
        return hash((self.linear.tobytes(), self.translation.tobytes()))


def compose(t2: AffineTransform2D, t1: AffineTransform2D) -> AffineTransform2D:
    """Transform that applies ``t1`` first, then ``t2``."""
    if _is_identity(t2):
        return t1
    if _is_identity(t1):
        return t2
    return AffineTransform2D(t2.linear @ t1.linear, t2.linear @ t1.translation + t2.translation)


def _is_identity(t):
    return np.array_equal(t.linear, np.eye(2)) and not t.translation.any()


def apply_to_point(t: AffineTransform2D, p) -> tuple[float, float]:
    x, y = float(p[0]), float(p[1])
    a = t.linear
    return (
        float(a[0, 0] * x + a[0, 1] * y + t.translation[0]),
        float(a[1, 0] * x + a[1, 1] * y + t.translation[1]),
    )


def _inverse_coeffs(t: AffineTransform2D) -> np.ndarray:
    inv = t.inverse()
    return np.array(
        [
            inv.linear[0, 0], inv.linear[0, 1], inv.translation[0],
            inv.linear[1, 0], inv.linear[1, 1], inv.translation[1],
        ],
        dtype=np.float64,
    )


def resample_mask(mask, t: AffineTransform2D) -> np.ndarray:
    """Warp ``mask`` forward by ``t`` with nearest-neighbour sampling.

    Each output pixel takes the label found at ``t^-1(pixel)`` in the input;
    source locations outside the grid read as background.
    """
    mask = as_mask(mask)
    coeffs = _inverse_coeffs(t)
    if _is_identity(t):
        return mask.copy()
    return kernels.resample_nearest(mask, coeffs)


def foreground_box(mask):
    """``(x0, y0, x1, y1)`` inclusive bounds of the foreground, or None if empty."""
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    return int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1])


def warp_window(coeffs, box, shape):
    """Output window ``(x0, y0, x1, y1)`` (half-open) that can receive ``box`` under a warp.

    ``coeffs`` is the inverse map as passed to the kernels.  A source pixel
    ``i`` is read by output locations whose source coordinate rounds to
    ``i``, i.e. lies in ``[i - 0.5, i + 0.5)``; the forward images of the
    corners of that padded box bound the window, plus one pixel of slack.
    """
    h, w = shape
    if box is None:
        return 0, 0, 0, 0
    a, b, c, d, e, f = coeffs
    det = a * e - b * d
    # forward map = inverse of the inverse
    fa, fb, fd, fe = e / det, -b / det, -d / det, a / det
    xs, ys = [], []
    for sx in (box[0] - 0.5, box[2] + 0.5):
        for sy in (box[1] - 0.5, box[3] + 0.5):
            u, v = sx - c, sy - f
            xs.append(fa * u + fb * v)
            ys.append(fd * u + fe * v)
    x0 = max(int(np.floor(min(xs))) - 1, 0)
    y0 = max(int(np.floor(min(ys))) - 1, 0)
    x1 = min(int(np.ceil(max(xs))) + 2, w)
    y1 = min(int(np.ceil(max(ys))) + 2, h)
    if x1 <= x0 or y1 <= y0:
        return 0, 0, 0, 0
    return x0, y0, x1, y1


def label_counts(mask) -> np.ndarray:
    return np.bincount(mask.ravel(), minlength=N_LABELS).astype(np.int64)


def warped_joint_histogram(moving, fixed, t: AffineTransform2D) -> np.ndarray:
    """4x4 joint label counts of ``resample_mask(moving, t)`` against ``fixed``."""
    moving = as_mask(moving)
    fixed = as_mask(fixed)
    coeffs = _inverse_coeffs(t)
    x0, y0, x1, y1 = warp_window(coeffs, foreground_box(moving), fixed.shape)
    return kernels.joint_histogram(moving, fixed, coeffs, x0, y0, x1, y1, label_counts(fixed))


def joint_histogram(a, b) -> np.ndarray:
    a = as_mask(a)
    b = as_mask(b)
    _check_same_shape(a, b)
    idx = a.astype(np.intp) * N_LABELS + b
    return np.bincount(idx.ravel(), minlength=N_LABELS * N_LABELS).reshape(N_LABELS, N_LABELS)


def dice_from_histogram(hist) -> float:
    """Mean per-class Dice over classes 1..3; a class absent from both counts as 1."""
    hist = np.asarray(hist, dtype=np.float64)
    rows = hist.sum(axis=1)
    cols = hist.sum(axis=0)
    scores = []
    for c in FOREGROUND:
        denom = rows[c] + cols[c]
        scores.append(1.0 if denom == 0 else 2.0 * hist[c, c] / denom)
    return float(np.mean(scores))


def union_dice_from_histogram(hist) -> float:
    """Dice of the label-agnostic foregrounds (any organ vs background)."""
    hist = np.asarray(hist, dtype=np.float64)
    both = hist[1:, 1:].sum()
    denom = hist[1:, :].sum() + hist[:, 1:].sum()
    return 1.0 if denom == 0 else float(2.0 * both / denom)


def mi_from_histogram(hist) -> float:
    return float(kernels.histogram_mi(np.ascontiguousarray(hist, dtype=np.int64)))


def dice(a, b, mode="per_class") -> float:
    hist = joint_histogram(a, b)
    return union_dice_from_histogram(hist) if mode == "union" else dice_from_histogram(hist)


def mutual_information(a, b) -> float:
    """Mutual information (nats) of the joint label histogram of two masks."""
    return mi_from_histogram(joint_histogram(a, b))


def label_entropy(mask) -> float:
    counts = np.bincount(as_mask(mask).ravel(), minlength=N_LABELS).astype(np.float64)
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def center_of_mass(mask) -> tuple[float, float]:
    mask = as_mask(mask)
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise EmptyMaskError("mask has no foreground pixels")
    return float(cols.mean()), float(rows.mean())


def crop_patch(img, center, size: int) -> np.ndarray:
    """Zero-padded ``size x size`` crop whose top-left is ``round(center) - size/2``."""
    if size < 2 or size % 2:
        raise ValueError(f"patch size must be even and >= 2, got {size}")
    img = np.asarray(img, dtype=np.float32)
    h, w = img.shape
    cx = int(np.floor(float(center[0]) + 0.5))
    cy = int(np.floor(float(center[1]) + 0.5))
    x0 = cx - size // 2
    y0 = cy - size // 2
    out = np.zeros((size, size), dtype=np.float32)
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + size, w), min(y0 + size, h)
    if sx1 > sx0 and sy1 > sy0:
        out[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = img[sy0:sy1, sx0:sx1]
    return out


def clamp_point(p, shape) -> tuple[float, float]:
    """Clamp ``p`` into ``[0, w-1] x [0, h-1]`` for an array of ``shape``."""
    h, w = shape
    return (float(min(max(p[0], 0.0), w - 1)), float(min(max(p[1], 0.0), h - 1)))


def downsample2(mask) -> np.ndarray:
    """Keep every other pixel; coarse pixel ``i`` is full-resolution pixel ``2i``."""
    return np.ascontiguousarray(as_mask(mask)[::2, ::2])
