"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5] [--images 8] [--draws 1000000]

The first numba call includes compilation (or a cache load) and is
reported separately.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from privsemcom import kernels


def _best_of(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--images", type=int, default=8, help="32x32x3 image pairs for SSIM")
    p.add_argument("--draws", type=int, default=1_000_000, help="fading magnitudes for the KS statistic")
    args = p.parse_args(argv)

    rng = np.random.default_rng(0)
    a = rng.random((args.images, 32, 32, 3))
    b = np.clip(a + 0.05 * rng.standard_normal(a.shape), 0, 1)
    mag = np.abs(rng.standard_normal(args.draws) + 1j * rng.standard_normal(args.draws)) / np.sqrt(2)

    cases = {
        "ssim_reference": lambda fast: kernels.ssim_reference(a, b, use_numba=fast),
        "ks_rayleigh": lambda fast: kernels.ks_rayleigh(mag, use_numba=fast),
    }
    print(f"numba available: {kernels.HAVE_NUMBA}")
    print(f"{'kernel':<16}{'numpy [s]':>12}{'numba [s]':>12}{'first call':>12}{'speedup':>10}")
    for name, fn in cases.items():
        t_np = _best_of(lambda: fn(False), args.repeat)
        if kernels.HAVE_NUMBA:
            t0 = time.perf_counter()
            r_fast = fn(True)
            first = time.perf_counter() - t0
            t_nb = _best_of(lambda: fn(True), args.repeat)
            assert abs(r_fast - fn(False)) < 1e-9, f"{name}: backends disagree"
            print(f"{name:<16}{t_np:>12.4f}{t_nb:>12.4f}{first:>12.3f}{t_np / t_nb:>9.1f}x")
        else:
            print(f"{name:<16}{t_np:>12.4f}{'-':>12}{'-':>12}{'-':>10}")


if __name__ == "__main__":
    main()
