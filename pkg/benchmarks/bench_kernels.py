"""Time the compiled kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from scenario_irl import _kernels_py

try:
    from scenario_irl import _kernels
except ImportError:  # extension not built
    _kernels = None

CEXP = np.array([(i, j) for i in range(3) for j in range(3)], dtype=np.int64)
VEXP = np.array([0, 1, 2], dtype=np.int64)
LQG = (-1.5, 1.0, 0.0, 1.0, 10.0, 0.9)


def cases(rng):
    # one value-iteration sweep on the 201 x 201 grid used by the benchmark expert
    S, A, R = 201, 201, 401
    cost = rng.normal(size=(S, A))
    ev = rng.normal(size=R)
    idx = rng.integers(0, R, size=(S, A)).astype(np.int64)
    yield "bellman_backup 201x201", lambda k: k.bellman_backup(cost, ev, idx, 0.9)
    x, y = rng.normal(size=40401), rng.normal(size=40401)
    yield "sup_diff 40401", lambda k: k.sup_diff(x, y)
    pts = rng.uniform(-10, 10, size=(1_000_000, 2))
    alpha, beta = rng.normal(size=9), rng.normal(size=3)
    yield "lqg_residuals 1e6 points", lambda k: k.lqg_residuals(pts, CEXP, alpha, VEXP, beta, *LQG)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'numpy [ms]':>12}{'cython [ms]':>13}{'speedup':>9}")
    for name, fn in cases(rng):
        t_np = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat)) * 1e3
        if _kernels is None:
            print(f"{name:<28}{t_np:>12.2f}{'n/a':>13}{'':>9}")
            continue
        t_cy = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<28}{t_np:>12.2f}{t_cy:>13.2f}{t_np / t_cy:>8.1f}x")


if __name__ == "__main__":
    main()
