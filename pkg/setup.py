"""Build the optional compiled kernels.

The extension is optional: if Cython or a C compiler is unavailable the
package installs without it and falls back to the numpy kernels.
"""
import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("RLNLOC_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "rlnloc._kernels",
                    ["src/rlnloc/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    # no FMA contraction: keeps rounding identical to the numpy path
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
