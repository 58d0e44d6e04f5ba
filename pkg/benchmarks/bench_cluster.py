"""Time the compiled and numpy agglomeration kernels on random bag-of-calls data.

    python3 benchmarks/bench_cluster.py --sizes 200,500,1000 --repeat 3
"""
import argparse
import time

import numpy as np

from traceoracle import _kernels_py
from traceoracle.baseline import distance_matrix

try:
    from traceoracle import _kernels
except ImportError:
    _kernels = None

LINKAGES = {"single": 0, "average": 1, "complete": 2}


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="200,500,1000")
    ap.add_argument("--features", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    print(f"{'n':>6} {'linkage':>9} {'python s':>10} {'compiled s':>11} {'speedup':>8}  same")
    for n in (int(s) for s in args.sizes.split(",")):
        X = rng.poisson(2.0, size=(n, args.features)).astype(np.int64)
        D = distance_matrix(X)
        for name, code in LINKAGES.items():
            tp, (pp, hp) = best_time(lambda: _kernels_py.agglomerate(D, code), args.repeat)
            if _kernels is None:
                print(f"{n:>6} {name:>9} {tp:>10.4f} {'n/a':>11} {'':>8}")
                continue
            tc, (pc, hc) = best_time(lambda: _kernels.agglomerate(D, code), args.repeat)
            same = np.array_equal(pp, pc) and np.array_equal(hp, hc)
            print(f"{n:>6} {name:>9} {tp:>10.4f} {tc:>11.4f} {tp / tc:>7.1f}x  {same}")


if __name__ == "__main__":
    main()
