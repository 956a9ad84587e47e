"""Timing of the online sweep kernels: numba vs the numpy fallback.

    python3 benchmarks/bench_kernels.py [--points 100000] [--levels 10]

Trains a small greedy model on a uniform L-shape mesh, then
times the batch evaluation and the saturation sweep with both backends
and checks that they agree.
"""

import argparse
import time

import numpy as np

from pdrb import _kernels, greedy


def build_model(levels):
    cfg = greedy.GreedyConfig(train_size=2000, uniform_levels=levels)
    return greedy.run_greedy(cfg).model


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--points", type=int, default=100_000)
    ap.add_argument("--levels", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    model = build_model(args.levels)
    data, n, nd = model.kernel_data(), model.N, model.Nd
    mus = greedy.make_training_set(args.points, 0)
    print("N=%d Nd=%d points=%d numba=%s" % (n, nd, args.points, _kernels.HAVE_NUMBA))

    res = {}
    for backend in ("numpy", "numba"):
        if backend == "numba" and not _kernels.HAVE_NUMBA:
            print("numba unavailable (PDRB_DISABLE_NUMBA set or not installed)")
            continue
        # warm-up compiles the jitted kernels
        _kernels.batch(mus[:10], data, n, nd, backend=backend)
        t_b, eta = best_of(lambda: _kernels.batch(mus, data, n, nd, backend=backend), args.repeat)
        cache = np.full(len(mus), np.inf)
        t_s, sw = best_of(lambda: _kernels.sweep(mus, cache.copy(), False, data, n, nd,
                                                 backend=backend), args.repeat)
        res[backend] = (eta, sw)
        print("%-6s batch %8.4f s  (%6.2f us/point)   sweep %8.4f s"
              % (backend, t_b, 1e6 * t_b / len(mus), t_s))

    if len(res) == 2:
        diff = np.max(np.abs(res["numpy"][0] - res["numba"][0]) / res["numpy"][0])
        same = res["numpy"][1][0] == res["numba"][1][0]
        print("max relative difference %.2e, same argmax: %s" % (diff, same))


if __name__ == "__main__":
    main()
