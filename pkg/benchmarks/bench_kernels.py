"""Time the numba kernels against their numpy counterparts.

Run with ``python benchmarks/bench_kernels.py``. Each case is timed after a
warm-up call so JIT compilation is excluded. Without numba only the numpy
column is filled.
"""

import argparse
import time

import numpy as np

from probemh import ChainConfig, _kernels
from probemh.sde import gbm_model, sample_paths
from probemh._accel import HAVE_NUMBA


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def sde_case(sweeps):
    model = gbm_model()
    cfg = ChainConfig(None, total_steps=sweeps, burn_in=0, thinning=50, seed=0)
    return lambda backend: (lambda: sample_paths(model, cfg, backend=backend, jobs=1))


def kde_case(n_points, n_queries):
    rng = np.random.default_rng(0)
    pts = rng.random((n_points, 1)) ** 2
    bw = np.array([0.02])
    qs = rng.random((n_queries, 1))
    kern = {"numba": _kernels.kde_logpdf_numba, "numpy": _kernels.kde_logpdf_numpy}
    return lambda backend: (lambda: kern[backend](pts, bw, qs))


def discrete_case(steps):
    rng = np.random.default_rng(0)
    p = rng.random((8, 8))
    cdf = np.cumsum(p / p.sum(axis=1, keepdims=True), axis=1)
    logw = np.log(rng.random(8))
    buf = rng.random(2 * steps)
    kern = {"numba": _kernels.discrete_mh_numba, "numpy": _kernels.discrete_mh_numpy}
    return lambda backend: (lambda: kern[backend](cdf, logw, 0, buf, np.zeros(8, dtype=np.int64)))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--sweeps", type=int, default=1000)
    args = ap.parse_args()

    cases = [
        (f"GBM sweep chain, {args.sweeps} sweeps x 100", sde_case(args.sweeps)),
        ("KDE log-density, 1e4 points x 2000 queries", kde_case(10_000, 2000)),
        ("finite-state MH, 2e5 steps", discrete_case(200_000)),
    ]
    backends = ["numba", "numpy"] if HAVE_NUMBA else ["numpy"]
    print(f"{'case':48s} " + " ".join(f"{b:>10s}" for b in backends) + ("    speedup" if HAVE_NUMBA else ""))
    for name, make in cases:
        secs = [best_of(make(b), args.repeat) for b in backends]
        row = f"{name:48s} " + " ".join(f"{s:9.4f}s" for s in secs)
        if HAVE_NUMBA:
            row += f"  {secs[1] / secs[0]:8.1f}x"
        print(row)


if __name__ == "__main__":
    main()
