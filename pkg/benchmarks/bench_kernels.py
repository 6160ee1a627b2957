"""Time the numba kernels against their numpy fallbacks on round-sized inputs.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Shapes mirror one ML-100K round: 256 uploads of ~1000 rows at d=128 for the
scatter, 943 users against 10 centroids for k-means, and a 300-user cluster
for the top-k neighbour pick.
"""
import argparse
import time

import numpy as np

from clusterfed import _accel, kernels


def _time(fn, repeat):
    fn()  # warm up (and trigger compilation)
    t = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t) / repeat


def cases(rng):
    N, d = 1682, 128
    ids = rng.integers(0, N, size=256 * 1000)
    rows = rng.normal(size=(ids.size, d))
    w = np.full(ids.size, 1 / 256)
    X, C = rng.normal(size=(943, d)), rng.normal(size=(10, d))
    U = rng.normal(size=(300, d))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    S = U @ U.T
    return [
        ("scatter_add_rows", lambda f: f(np.zeros((N, d)), ids, rows, w),
         kernels.scatter_add_rows, kernels.scatter_add_rows_numpy),
        ("nearest_centroid", lambda f: f(X, C), kernels.nearest_centroid, kernels.nearest_centroid_numpy),
        ("topk_rows", lambda f: f(S, 200), kernels.topk_rows, kernels.topk_rows_numpy),
    ]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        print("numba disabled or missing; both columns time the numpy path")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for name, call, fast, slow in cases(rng):
        a = _time(lambda: call(fast), args.repeat)
        b = _time(lambda: call(slow), args.repeat)
        print(f"{name:<18} {a * 1e3:>10.2f} {b * 1e3:>10.2f} {b / a:>8.1f}")


if __name__ == "__main__":
    main()
