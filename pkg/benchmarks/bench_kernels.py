"""Timings for the numba kernels against their pure-numpy fallbacks.

Run: python benchmarks/bench_kernels.py [--quick]
The numba column requires numba; with SCPM_NO_NUMBA=1 the library itself
would use the numpy column, but this script always times both directly.
"""

import argparse
import time

import numpy as np

from scpm import kernels


def timeit(fn, *args, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_pool(quick):
    n, d = (13, 128) if quick else (13, 512)
    rng = np.random.default_rng(0)
    values = rng.normal(size=(n, n, d)).astype(np.float32)
    return f"multi-max pool {n}x{n}x{d}", (values,), kernels.pool_pyramid_numpy, kernels.pool_pyramid_numba


def bench_resp(quick):
    n, k, p = (20000, 64, 64) if quick else (50000, 128, 128)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(n, p))
    means = rng.normal(size=(k, p))
    stds = rng.uniform(0.5, 2.0, size=(k, p))
    logw = np.log(np.full(k, 1.0 / k))
    return (
        f"GMM responsibilities {n}x{k}x{p}",
        (x, means, stds, logw),
        kernels.gmm_log_resp_numpy,
        kernels.gmm_log_resp_numba,
    )


def bench_fv(quick):
    t, k, p = (2000, 64, 64) if quick else (5000, 128, 128)
    rng = np.random.default_rng(2)
    x = rng.normal(size=(t, p))
    means = rng.normal(size=(k, p))
    stds = rng.uniform(0.5, 2.0, size=(k, p))
    weights = np.full(k, 1.0 / k)
    resp, _ = kernels.gmm_log_resp_numpy(x, means, stds, np.log(weights))
    return (
        f"FV accumulate {t} parts, K={k}, p={p}",
        (x, resp, means, stds, weights),
        kernels.fv_accumulate_numpy,
        kernels.fv_accumulate_numba,
    )


def bench_svm(quick):
    n, d = (400, 4096) if quick else (400, 16384)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(n, d))
    y = np.where(rng.integers(2, size=n) > 0, 1.0, -1.0)
    sqnorm = np.einsum("ij,ij->i", x, x)
    order = rng.permutation(n)

    def run(epoch_fn):
        def inner(*_):
            alpha = np.zeros(n)
            w = np.zeros(d)
            for _ in range(3):
                epoch_fn(x, y, sqnorm, alpha, w, 0.5, order)

        return inner

    return (
        f"SVM dual CD, 3 epochs, {n}x{d}",
        (),
        run(kernels.svm_cd_epoch_numpy),
        run(kernels.svm_cd_epoch_numba),
    )


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true", help="smaller problem sizes")
    args = parser.parse_args()
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'kernel':45s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for make in (bench_pool, bench_resp, bench_fv, bench_svm):
        name, data, np_fn, nb_fn = make(args.quick)
        nb_fn(*data)  # JIT compile outside the timed region
        t_np = timeit(np_fn, *data)
        t_nb = timeit(nb_fn, *data)
        print(f"{name:45s} {t_np * 1e3:9.1f}ms {t_nb * 1e3:9.1f}ms {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
