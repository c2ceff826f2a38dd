"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Prints the best-of-N wall time per call for each backend and the speedup.
"""

import argparse
import timeit

import numpy as np

from yoeo import _kernels_py

try:
    from yoeo import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def workloads(rng):
    B, N, M = 100, 16, 16
    pred = rng.normal(size=(B, N))
    target = rng.normal(size=(B, M))
    taus = rng.uniform(size=(B, N))
    lse_in = rng.normal(size=(100, 11)) * 5
    n = 50_000
    rewards = rng.normal(size=n)
    dones = rng.uniform(size=n) < 0.02
    episode_end = np.full(n, n, dtype=np.int64)
    ends = np.flatnonzero(dones) + 1
    start = 0
    for e in ends:
        episode_end[start:e] = e
        start = e
    starts = rng.integers(0, n, size=100)
    points = rng.normal(size=(50_000, 4))
    query = rng.normal(size=4)
    cos_taus = rng.uniform(size=(100, 16))
    return {
        "quantile_huber": lambda k: k.quantile_huber(pred, target, taus, 1.0),
        "logsumexp_weights": lambda k: k.logsumexp_weights(lse_in),
        "nstep_returns": lambda k: k.nstep_returns(rewards, dones, episode_end, starts, 10, 0.99),
        "knn_indices": lambda k: k.knn_indices(points, query, 100),
        "cosine_basis": lambda k: k.cosine_basis(cos_taus, 64),
    }


def best_time(fn, repeat):
    number = 5
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'python (us)':>14}{'cython (us)':>14}{'speedup':>10}")
    for name, call in workloads(rng).items():
        t_py = best_time(lambda: call(_kernels_py), args.repeat)
        if _compiled is None:
            print(f"{name:<20}{t_py * 1e6:>14.1f}{'n/a':>14}{'':>10}")
            continue
        t_cy = best_time(lambda: call(_compiled), args.repeat)
        print(f"{name:<20}{t_py * 1e6:>14.1f}{t_cy * 1e6:>14.1f}{t_py / t_cy:>9.1f}x")


if __name__ == "__main__":
    main()
