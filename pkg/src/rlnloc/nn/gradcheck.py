"""Central finite-difference gradient checks."""
from __future__ import annotations

import numpy as np


def rel_error(analytic, numeric, floor=1e-8):
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def numeric_grad(f, x, h=1e-4, indices=None):
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place).

    ``indices`` restricts the check to a subset of flat positions; the
    returned array then holds only those entries.
    """
    flat = x.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = []
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out.append((fp - fm) / (2.0 * h))
    return np.array(out)


def sample_indices(rng, size, count):
    if size <= count:
        return np.arange(size)
    return np.sort(rng.choice(size, count, replace=False))
