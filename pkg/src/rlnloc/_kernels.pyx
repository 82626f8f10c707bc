# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled nearest-neighbour warp kernels for label masks.

The warp kernels take the *inverse* affine as six doubles ``(a, b, c, d, e, f)``
mapping an output pixel ``(x, y)`` to the source location
``(a*x + b*y + c, d*x + e*y + f)``.  The arithmetic order matches
``_kernels_py`` exactly so the two backends agree bit for bit.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport log

cnp.import_array()


cdef inline Py_ssize_t _nearest(double s, Py_ssize_t n) noexcept nogil:
    # floor(s + 0.5) for in-range values; -1 flags out of range
    cdef double t = s + 0.5
    if t < 0.0 or t >= n:
        return -1
    return <Py_ssize_t>t


def resample_nearest(const unsigned char[:, ::1] src, double[::1] inv):
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1]
    out = np.zeros((h, w), dtype=np.uint8)
    cdef unsigned char[:, ::1] o = out
    cdef double a = inv[0], b = inv[1], c = inv[2]
    cdef double d = inv[3], e = inv[4], f = inv[5]
    cdef Py_ssize_t r, col, ix, iy
    with nogil:
        for r in range(h):
            for col in range(w):
                ix = _nearest(a * col + b * r + c, w)
                iy = _nearest(d * col + e * r + f, h)
                if ix >= 0 and iy >= 0:
                    o[r, col] = src[iy, ix]
    return out


def joint_histogram(const unsigned char[:, ::1] moving,
                    const unsigned char[:, ::1] fixed,
                    double[::1] inv,
                    Py_ssize_t x0=0, Py_ssize_t y0=0,
                    Py_ssize_t x1=-1, Py_ssize_t y1=-1,
                    cnp.int64_t[::1] fixed_counts=None):
    """4x4 counts of (warped moving label, fixed label); rows index moving.

    Only output pixels in ``[x0, x1) x [y0, y1)`` are sampled.  Pixels outside
    that window are taken as background in the warped mask, which is exact
    when the window covers the warped foreground; ``fixed_counts`` (the
    per-label totals of ``fixed``) is then needed to fill row 0.
    """
    cdef Py_ssize_t h = fixed.shape[0], w = fixed.shape[1]
    cdef Py_ssize_t mh = moving.shape[0], mw = moving.shape[1]
    if x1 < 0:
        x1 = w
    if y1 < 0:
        y1 = h
    x0 = max(x0, 0)
    y0 = max(y0, 0)
    x1 = min(x1, w)
    y1 = min(y1, h)
    cdef cnp.int64_t acc[16]
    cdef cnp.int64_t inside[4]
    cdef Py_ssize_t i
    for i in range(16):
        acc[i] = 0
    for i in range(4):
        inside[i] = 0
    cdef double a = inv[0], b = inv[1], c = inv[2]
    cdef double d = inv[3], e = inv[4], f = inv[5]
    cdef Py_ssize_t r, col, ix, iy
    cdef unsigned char lab, fl
    with nogil:
        for r in range(y0, y1):
            for col in range(x0, x1):
                ix = _nearest(a * col + b * r + c, mw)
                iy = _nearest(d * col + e * r + f, mh)
                lab = 0
                if ix >= 0 and iy >= 0:
                    lab = moving[iy, ix]
                fl = fixed[r, col]
                acc[lab * 4 + fl] += 1
                inside[fl] += 1
    hist = np.zeros((4, 4), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] hv = hist
    for i in range(16):
        hv[i // 4, i % 4] = acc[i]
    if fixed_counts is not None:
        for i in range(4):
            hv[0, i] += fixed_counts[i] - inside[i]
    elif x0 > 0 or y0 > 0 or x1 < w or y1 < h:
        raise ValueError("fixed_counts is required with a partial window")
    return hist


def histogram_mi(cnp.int64_t[:, ::1] hist):
    """Mutual information (nats) of a 4x4 count table."""
    cdef double n = 0.0, mi = 0.0, p
    cdef double pa[4]
    cdef double pb[4]
    cdef Py_ssize_t i, j
    for i in range(4):
        pa[i] = 0.0
        pb[i] = 0.0
    cdef cnp.int64_t rows[4]
    cdef cnp.int64_t cols[4]
    cdef cnp.int64_t total = 0
    for i in range(4):
        rows[i] = 0
        cols[i] = 0
    for i in range(4):
        for j in range(4):
            rows[i] += hist[i, j]
            cols[j] += hist[i, j]
            total += hist[i, j]
    if total == 0:
        return 0.0
    n = <double>total
    for i in range(4):
        pa[i] = rows[i] / n
        pb[i] = cols[i] / n
    for i in range(4):
        for j in range(4):
            if hist[i, j] > 0:
                p = hist[i, j] / n
                mi += p * log(p / (pa[i] * pb[j]))
    return mi if mi > 0.0 else 0.0
