"""Compiled vs numpy kernel timings.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--no-register]

Times the three hot kernels on a 256 x 256 phantom with each backend,
then one full registration per backend (in a subprocess, since the backend
is bound at import time).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from rlnloc.kernels import get_backend
from rlnloc.synth import PhantomParams, generate_phantom

REGISTER_SNIPPET = """
import time
import numpy as np
from rlnloc.imaging import AffineTransform2D, resample_mask
from rlnloc.kernels import BACKEND
from rlnloc.registration import register
from rlnloc.synth import PhantomParams, generate_phantom
m = generate_phantom(PhantomParams(), seed=3)[0]
a = np.radians(6.0)
lin = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]]) * 1.04
fixed = resample_mask(m, AffineTransform2D(lin, (127.5, 127.5) - lin @ (127.5, 127.5) + (4, -3)))
t = time.perf_counter()
res = register(m, fixed)
print(BACKEND, time.perf_counter() - t, res.evaluations)
"""


def _inverse(deg, scale, shift):
    a = np.radians(deg)
    lin = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]]) * scale
    c = np.array([127.5, 127.5])
    t = c - lin @ c + np.asarray(shift)
    inv = np.linalg.inv(lin)
    return np.array([inv[0, 0], inv[0, 1], -(inv @ t)[0], inv[1, 0], inv[1, 1], -(inv @ t)[1]])


def bench(repeat):
    mask = generate_phantom(PhantomParams(), seed=3)[0]
    fixed = generate_phantom(PhantomParams(angle_theta=5.0), seed=4)[0]
    inv = _inverse(7.0, 1.05, (3.0, -2.0))
    hist = get_backend("python").joint_histogram(mask, fixed, inv)
    cases = {
        "resample_nearest": lambda k: k.resample_nearest(mask, inv),
        "joint_histogram": lambda k: k.joint_histogram(mask, fixed, inv),
        "histogram_mi": lambda k: k.histogram_mi(hist),
    }
    print(f"{'kernel':<20}{'python (ms)':>14}{'compiled (ms)':>16}{'speedup':>10}")
    for name, fn in cases.items():
        times = {}
        for backend in ("python", "compiled"):
            try:
                k = get_backend(backend)
            except ImportError:
                times[backend] = float("nan")
                continue
            times[backend] = min(timeit.repeat(lambda: fn(k), number=1, repeat=repeat)) * 1e3
        print(f"{name:<20}{times['python']:>14.3f}{times['compiled']:>16.3f}"
              f"{times['python'] / times['compiled']:>9.1f}x")


def bench_register():
    print("\nfull registration")
    for pure in ("1", "0"):
        env = dict(os.environ, RLNLOC_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", REGISTER_SNIPPET], env=env,
                             capture_output=True, text=True, check=True).stdout.split()
        print(f"  {out[0]:<10}{float(out[1]) * 1e3:>10.1f} ms  ({out[2]} objective evaluations)")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--no-register", action="store_true", help="skip the end-to-end registration timing")
    args = ap.parse_args(argv)
    bench(args.repeat)
    if not args.no_register:
        bench_register()


if __name__ == "__main__":
    main()
