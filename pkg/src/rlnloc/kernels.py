"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback is used.  Set ``RLNLOC_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("RLNLOC_PURE_PYTHON") != "1":
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"

resample_nearest = _impl.resample_nearest
joint_histogram = _impl.joint_histogram
histogram_mi = _impl.histogram_mi


def get_backend(name):
    """Return the kernel module for ``name`` ('python' or 'compiled')."""
    if name == "python":
        return _kernels_py
    if name == "compiled":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")
