"""Pure numpy versions of the compiled warp kernels (same contract)."""
import math

import numpy as np

_GRID_CACHE = {}


def _grid(h, w):
    key = (h, w)
    g = _GRID_CACHE.get(key)
    if g is None:
        rr, cc = np.mgrid[0:h, 0:w]
        g = (cc.astype(np.float64), rr.astype(np.float64))
        _GRID_CACHE[key] = g
    return g


def _nearest(s, n):
    t = s + 0.5
    ok = (t >= 0.0) & (t < n)
    idx = np.where(ok, t, 0.0).astype(np.intp)
    return np.where(ok, idx, -1)


def _source_labels(src, inv, cc, rr):
    a, b, c, d, e, f = (float(v) for v in inv)
    sh, sw = src.shape
    ix = _nearest(a * cc + b * rr + c, sw)
    iy = _nearest(d * cc + e * rr + f, sh)
    inside = (ix >= 0) & (iy >= 0)
    out = np.zeros(cc.shape, dtype=np.uint8)
    out[inside] = src[iy[inside], ix[inside]]
    return out


def resample_nearest(src, inv):
    h, w = src.shape
    cc, rr = _grid(h, w)
    return _source_labels(src, inv, cc, rr)


def joint_histogram(moving, fixed, inv, x0=0, y0=0, x1=-1, y1=-1, fixed_counts=None):
    h, w = fixed.shape
    x1 = w if x1 < 0 else min(x1, w)
    y1 = h if y1 < 0 else min(y1, h)
    x0, y0 = max(x0, 0), max(y0, 0)
    partial = x0 > 0 or y0 > 0 or x1 < w or y1 < h
    if partial and fixed_counts is None:
        raise ValueError("fixed_counts is required with a partial window")
    hist = np.zeros((4, 4), dtype=np.int64)
    if x1 > x0 and y1 > y0:
        cc, rr = _grid(h, w)
        win = (slice(y0, y1), slice(x0, x1))
        warped = _source_labels(moving, inv, cc[win], rr[win])
        idx = warped.astype(np.intp) * 4 + fixed[win]
        hist += np.bincount(idx.ravel(), minlength=16).reshape(4, 4)
    if fixed_counts is not None:
        inside = hist.sum(axis=0)
        hist[0] += np.asarray(fixed_counts, dtype=np.int64) - inside
    return hist


def histogram_mi(hist):
    n = float(hist.sum())
    if n == 0:
        return 0.0
    pa = [float(v) / n for v in hist.sum(axis=1)]
    pb = [float(v) / n for v in hist.sum(axis=0)]
    mi = 0.0
    for i in range(4):
        for j in range(4):
            if hist[i, j] > 0:
                p = float(hist[i, j]) / n
                mi += p * math.log(p / (pa[i] * pb[j]))
    return mi if mi > 0.0 else 0.0
