"""Compare the numba and numpy kernels on jet evaluation and RK4 stepping.

    python benchmarks/bench_backends.py [--points 2000] [--steps 10000] [--repeat 3]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from finslerlab import _kernels
from finslerlab.geometry import FinslerModel, sample_points

MODELS = {
    "randers2": ("(sqrt(u1^2 + u2^2) + 0.3*u1)^2", 2),
    "polar2": ("0.5*(u1^2 + q1^2*u2^2)", 2),
    "euclid3": ("0.5*(u1^2 + u2^2 + u3^2)", 3),
}


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=10000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    nb, npy = _kernels.get_backend("numba"), _kernels.get_backend("numpy")
    print(f"{'model':10s} {'task':14s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s}")
    for name, (src, n) in MODELS.items():
        m = FinslerModel(src, n)
        X = sample_points(n, args.points, 0, [0.5, 1.5], [-1, 1])
        x0 = X[0]
        nb.eval_tape(m.program, X[:2], 3)  # compile outside the timing
        nb.rk4(m.program, x0, 1e-3, 2, n, 1e-6)
        tasks = {
            "jets order 3": lambda b: b.eval_tape(m.program, X, 3),
            "rk4": lambda b: b.rk4(m.program, x0, 1e-3, args.steps, n, 1e-6),
        }
        for task, fn in tasks.items():
            tn = best_of(lambda: fn(nb), args.repeat)
            tp = best_of(lambda: fn(npy), args.repeat)
            print(f"{name:10s} {task:14s} {tn:10.4f} {tp:10.4f} {tp / tn:8.1f}x")
        a = nb.rk4(m.program, x0, 1e-3, 100, n, 1e-6)[0]
        b = npy.rk4(m.program, x0, 1e-3, 100, n, 1e-6)[0]
        assert np.allclose(a, b, rtol=1e-11, atol=1e-12), "backends disagree"


if __name__ == "__main__":
    main()
