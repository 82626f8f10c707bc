"""Segmentation and coordinate-regression losses with analytic gradients."""
from __future__ import annotations

import numpy as np

SOFT_DICE_EPS = 1e-5


def softmax(logits, axis=1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def seg_loss(logits, target):
    """Cross-entropy (mean per pixel) plus soft-Dice loss over all four classes.

    ``logits`` is (N, 4, H, W); ``target`` is an (N, H, W) integer label array.
    Returns ``(loss, dlogits)``.
    """
    logits = np.asarray(logits)
    target = np.asarray(target)
    n, k, h, w = logits.shape
    if target.shape != (n, h, w):
        raise ValueError(f"seg_loss: target shape {target.shape} != {(n, h, w)}")
    p = softmax(logits)
    g = np.zeros_like(p)
    np.put_along_axis(g, target[:, None].astype(np.intp), 1.0, axis=1)
    m = n * h * w

    logp = np.log(np.clip(p, np.finfo(p.dtype).tiny, None))
    ce = -(g * logp).sum() / m
    dce = (p - g) / m

    # soft Dice per class, summed over batch and pixels
    inter = (p * g).sum(axis=(0, 2, 3))
    psum = p.sum(axis=(0, 2, 3))
    gsum = g.sum(axis=(0, 2, 3))
    num = 2.0 * inter + SOFT_DICE_EPS
    den = psum + gsum + SOFT_DICE_EPS
    dsc = num / den
    dice_loss = 1.0 - dsc.mean()
    # d(dice_loss)/dp_c = -(1/k) * (2 g / den - num / den^2)
    dp = -(2.0 * g / den[None, :, None, None] - (num / den ** 2)[None, :, None, None]) / k
    # back through softmax: dz = p * (dp - sum_c p dp)
    ddice = p * (dp - (p * dp).sum(axis=1, keepdims=True))
    return float(ce + dice_loss), (dce + ddice).astype(logits.dtype)


def smooth_l1(dx, dy, beta=1.0):
    """Joint piecewise smooth-L1 of a 2D offset and its gradient.

    Quadratic ``(dx^2 + dy^2) / (2 beta)`` while ``|dx| + |dy| < 2 beta``,
    otherwise ``|dx| + |dy| - beta``.  On the boundary the linear branch (and
    its sign-vector gradient) applies.
    """
    dx = np.asarray(dx, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    s = np.abs(dx) + np.abs(dy)
    quad = s < 2.0 * beta
    val = np.where(quad, (dx * dx + dy * dy) / (2.0 * beta), s - beta)
    gx = np.where(quad, dx / beta, np.sign(dx))
    gy = np.where(quad, dy / beta, np.sign(dy))
    return val, gx, gy


def smooth_l1_standard(dx, dy, beta=1.0):
    """Conventional per-coordinate smooth-L1, summed over x and y."""
    def one(d):
        a = np.abs(d)
        q = a < beta
        return np.where(q, 0.5 * d * d / beta, a - 0.5 * beta), np.where(q, d / beta, np.sign(d))

    vx, gx = one(np.asarray(dx, dtype=np.float64))
    vy, gy = one(np.asarray(dy, dtype=np.float64))
    return vx + vy, gx, gy


def regression_loss(pred, target, beta=1.0, standard=False):
    """Summed smooth-L1 over a batch of (N, 2) offsets; returns ``(loss, dpred)``."""
    pred = np.asarray(pred)
    diff = pred.astype(np.float64) - np.asarray(target, dtype=np.float64)
    fn = smooth_l1_standard if standard else smooth_l1
    val, gx, gy = fn(diff[:, 0], diff[:, 1], beta)
    grad = np.stack([gx, gy], axis=1).astype(pred.dtype)
    return float(val.sum()), grad
