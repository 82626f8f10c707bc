"""Forward/backward pairs for the layers the two networks use.

Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes the output gradient and that cache.  Arrays are NCHW and keep the
dtype of their input, so float64 inputs run the whole stack in float64.
"""
from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


# -- convolution ----------------------------------------------------------

def _im2col(x):
    """Channel-last columns ``(n*h*w, 9*c)``; column ``k*c + ci`` reads shift k = 3*i + j."""
    n, c, h, wd = x.shape
    xp = np.pad(x.transpose(0, 2, 3, 1), ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((n, h, wd, 9, c), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            cols[:, :, :, 3 * i + j] = xp[:, i:i + h, j:j + wd]
    return cols.reshape(n * h * wd, 9 * c)


def _kernel_matrix(w):
    """``(9*c, o)`` matrix matching the column order of :func:`_im2col`."""
    o, c = w.shape[:2]
    return np.ascontiguousarray(w.transpose(2, 3, 1, 0).reshape(9 * c, o))


def conv2d_forward(x, w, b=None):
    """3x3 cross-correlation, stride 1, zero padding 1 (output keeps H x W)."""
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {ci}")
    if (kh, kw) != (3, 3):
        raise ShapeError("conv2d: only 3x3 kernels are supported")
    cols = _im2col(x)
    out = cols @ _kernel_matrix(w)
    if b is not None:
        out += b
    out = np.ascontiguousarray(out.reshape(n, h, wd, o).transpose(0, 3, 1, 2))
    return out, (cols, x.shape, w, b is not None)


def conv2d_backward(dout, cache):
    cols, xshape, w, has_bias = cache
    n, c, h, wd = xshape
    o = w.shape[0]
    d = np.ascontiguousarray(dout.transpose(0, 2, 3, 1)).reshape(n * h * wd, o)
    dw = (cols.T @ d).T.reshape(o, 3, 3, c).transpose(0, 3, 1, 2)
    db = d.sum(axis=0) if has_bias else None
    dcols = (d @ _kernel_matrix(w).T).reshape(n, h, wd, 9, c)
    dxp = np.zeros((n, h + 2, wd + 2, c), dtype=dout.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, i:i + h, j:j + wd] += dcols[:, :, :, 3 * i + j]
    dx = np.ascontiguousarray(dxp[:, 1:-1, 1:-1].transpose(0, 3, 1, 2))
    return dx, np.ascontiguousarray(dw), db


# -- normalization and activation -----------------------------------------

def instance_norm_forward(x, eps=1e-5):
    """Per-sample, per-channel standardization over H x W (no affine)."""
    if x.shape[2] * x.shape[3] < 2:
        raise ShapeError("instance_norm needs at least 2 pixels per plane")
    mu = x.mean(axis=(2, 3), keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    return y, (y, inv)


def instance_norm_backward(dout, cache):
    y, inv = cache
    m1 = dout.mean(axis=(2, 3), keepdims=True)
    m2 = (dout * y).mean(axis=(2, 3), keepdims=True)
    return inv * (dout - m1 - y * m2)


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


# -- pooling ----------------------------------------------------------------

def max_pool2_forward(x):
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2 needs even H and W, got {h}x{w}")
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape)


def max_pool2_backward(dout, cache):
    idx, shape = cache
    n, c, h, w = shape
    blocks = np.zeros((n, c, h // 2, w // 2, 4), dtype=dout.dtype)
    np.put_along_axis(blocks, idx[..., None], dout[..., None], axis=-1)
    return blocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape)


def _bins(size, out):
    return [(int(np.floor(i * size / out)), int(np.ceil((i + 1) * size / out))) for i in range(out)]


def adaptive_max_pool_forward(x, out_size=4):
    """Max over an ``out_size x out_size`` grid of near-equal (possibly overlapping) bins."""
    n, c, h, w = x.shape
    if h < out_size or w < out_size:
        raise ShapeError(f"adaptive pool to {out_size}x{out_size} needs input at least that large, got {h}x{w}")
    out = np.empty((n, c, out_size, out_size), dtype=x.dtype)
    argmax = np.empty((n, c, out_size, out_size), dtype=np.intp)
    for i, (r0, r1) in enumerate(_bins(h, out_size)):
        for j, (c0, c1) in enumerate(_bins(w, out_size)):
            patch = x[:, :, r0:r1, c0:c1].reshape(n, c, -1)
            k = patch.argmax(axis=-1)
            out[:, :, i, j] = np.take_along_axis(patch, k[..., None], axis=-1)[..., 0]
            bw = c1 - c0
            argmax[:, :, i, j] = (r0 + k // bw) * w + (c0 + k % bw)
    return out, (argmax, x.shape)


def adaptive_max_pool_backward(dout, cache):
    argmax, shape = cache
    n, c, h, w = shape
    dx = np.zeros((n * c, h * w), dtype=dout.dtype)
    flat_idx = argmax.reshape(n * c, -1)
    rows = np.repeat(np.arange(n * c), flat_idx.shape[1])
    np.add.at(dx, (rows, flat_idx.ravel()), dout.reshape(n * c, -1).ravel())
    return dx.reshape(shape)


def upsample_nearest_forward(x, size):
    """Nearest-neighbour upsampling of a square ``s x s`` plane to ``size x size``."""
    s = x.shape[2]
    if size % s:
        raise ShapeError(f"cannot upsample {s} to {size} by an integer factor")
    f = size // s
    return x.repeat(f, axis=2).repeat(f, axis=3), f


def upsample_nearest_backward(dout, f):
    n, c, h, w = dout.shape
    return dout.reshape(n, c, h // f, f, w // f, f).sum(axis=(3, 5))


# -- dense ------------------------------------------------------------------

def linear_forward(x, w, b):
    """``x @ w.T + b`` with ``w`` shaped (out, in)."""
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: input width {x.shape[1]} != weight width {w.shape[1]}")
    return x @ w.T + b, x


def linear_backward(dout, x, w):
    return dout @ w, dout.T @ x, dout.sum(axis=0)


# -- composite block ----------------------------------------------------------

def conv_block_forward(x, w1, w2):
    """conv -> instance norm -> ReLU, twice."""
    h, c1 = conv2d_forward(x, w1)
    h, n1 = instance_norm_forward(h)
    h, r1 = relu_forward(h)
    h, c2 = conv2d_forward(h, w2)
    h, n2 = instance_norm_forward(h)
    h, r2 = relu_forward(h)
    return h, (c1, n1, r1, c2, n2, r2)


def conv_block_backward(dout, cache):
    c1, n1, r1, c2, n2, r2 = cache
    d = relu_backward(dout, r2)
    d = instance_norm_backward(d, n2)
    d, dw2, _ = conv2d_backward(d, c2)
    d = relu_backward(d, r1)
    d = instance_norm_backward(d, n1)
    d, dw1, _ = conv2d_backward(d, c1)
    return d, dw1, dw2


def kaiming(rng, shape, fan_in, dtype=np.float32):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
