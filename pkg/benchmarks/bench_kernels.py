"""Time the numba kernels against their numpy fallbacks.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``. The numba
variants are compiled once before timing, and each pair is checked for
agreement before its timings are reported.
"""

import argparse
import time

import numpy as np

from multiquery import kernels
from multiquery.designs import sobol_directions


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    x = rng.uniform(size=(600, 3))
    ell = np.array([0.3, 0.5, 0.7])
    k = kernels.se_kernel_np(x, x, ell, 1.2)
    w = rng.normal(size=k.shape)
    w = w + w.T
    weights = rng.exponential(size=200_000)
    weights /= weights.sum()
    dirs = np.ascontiguousarray(sobol_directions(8), dtype=np.uint64)
    return {
        "sobol_ints 2^16 x 8": (
            lambda: kernels.sobol_ints_nb(dirs, np.int64(1), np.int64(1 << 16)),
            lambda: kernels.sobol_ints_np(dirs, 1, 1 << 16),
        ),
        "se_kernel 600 x 600": (
            lambda: kernels.se_kernel_nb(x, x, ell, 1.2),
            lambda: kernels.se_kernel_np(x, x, ell, 1.2),
        ),
        "se_lengthscale_traces 600": (
            lambda: kernels.se_lengthscale_traces_nb(x, k, w, ell),
            lambda: kernels.se_lengthscale_traces_np(x, k, w, ell),
        ),
        "systematic_resample 2e5": (
            lambda: kernels.systematic_resample_nb(weights, 0.37),
            lambda: kernels.systematic_resample_np(weights, 0.37),
        ),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if not kernels._HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speedup':>8s}")
    for name, (nb, npy) in cases(rng).items():
        a, b = nb(), npy()  # compiles the numba variant
        if not np.allclose(a, b, rtol=1e-12, atol=1e-12):
            raise SystemExit(f"{name}: numba and numpy results disagree")
        t_nb, t_np = best_of(nb, args.repeat), best_of(npy, args.repeat)
        print(f"{name:28s} {1e3 * t_nb:11.3f} {1e3 * t_np:11.3f} {t_np / t_nb:8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
