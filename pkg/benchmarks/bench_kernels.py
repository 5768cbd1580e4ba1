"""Compare the compiled and pure-Python convolution backends.

Usage::

    python benchmarks/bench_kernels.py [--repeat 20]

Times ``conv_same`` and ``corr_same`` for the forward-model kernel shapes
(peak kernel and Gaussian blur) at several signal lengths and batch sizes,
and checks that both backends return identical arrays.
"""

import argparse
import timeit

import numpy as np

from chromunroll import _kernels_py, kernels
from chromunroll.sigmodel import KernelSpec, gaussian_blur_taps, sample_kernel


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    try:
        from chromunroll import _kernels as compiled
    except ImportError:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")

    peak = sample_kernel(KernelSpec(sigma_f=0.5, a=0.2))
    blur = gaussian_blur_taps(1.0)
    rng = np.random.default_rng(0)
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':<6} {'op':<5} {'n':>5} {'batch':>5} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, k in (("peak", peak), ("blur", blur)):
        for n in (500, 2000):
            for batch in (1, 16):
                x = rng.standard_normal((batch, n))
                for op in ("conv_same", "corr_same"):
                    fn = getattr(kernels, op)
                    a = fn(x, k.taps, k.offset, impl=_kernels_py)
                    b = fn(x, k.taps, k.offset, impl=compiled)
                    if not np.array_equal(a, b):
                        raise SystemExit(f"backends disagree on {name}/{op} n={n} batch={batch}")
                    t = {}
                    for label, impl in (("py", _kernels_py), ("cy", compiled)):
                        t[label] = min(
                            timeit.repeat(lambda: fn(x, k.taps, k.offset, impl=impl), number=5, repeat=args.repeat)
                        ) / 5 * 1e3
                    print(f"{name:<6} {op[:4]:<5} {n:>5} {batch:>5} {t['py']:>10.4f} {t['cy']:>10.4f} "
                          f"{t['py'] / t['cy']:>7.1f}x")


if __name__ == "__main__":
    main()
