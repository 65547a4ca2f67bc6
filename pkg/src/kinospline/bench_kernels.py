"""Benchmark the hot kernels on the jitted and pure-Python paths.

Run `python -m kinospline.bench_kernels` to time the current mode (numba
unless KINOSPLINE_NO_NUMBA is set). With `--compare`, a subprocess re-runs
the measurements with the fallback forced on and both columns print side
by side.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from . import kernels
from .splines import blending_tables


def _timeit(fn, min_time=0.25):
    fn()
    n = 1
    while True:
        t0 = time.perf_counter()
        for _ in range(n):
            fn()
        dt = time.perf_counter() - t0
        if dt >= min_time:
            return dt / n
        n = max(n * 2, int(n * min_time / max(dt, 1e-9)))


def run_benchmarks() -> dict:
    kernels.warmup()
    tab = blending_tables(5)
    rng = np.random.default_rng(0)
    P = rng.normal(size=(6, 3))
    dt = 0.17
    big = np.full(3, 2.0)
    biga = np.full(3, 4.7)
    ex = np.empty((3, 2))
    out = {}
    out["span_extrema"] = _timeit(
        lambda: kernels.span_extrema_kernel(P, tab.M, 1, dt, ex))
    out["span_feasible"] = _timeit(
        lambda: kernels.span_feasible_kernel(P, tab.M, dt, -big, big,
                                             -biga, biga))
    cm = tab.cost_mat(3)
    out["span_cost"] = _timeit(
        lambda: kernels.span_cost_kernel(P, cm, dt ** -5))

    dims = np.array([51, 51, 5], dtype=np.int64)
    occ = np.zeros(int(np.prod(dims)), dtype=np.uint8)
    zero3 = np.zeros(3, dtype=np.int64)
    csz = np.array([0.2, 0.2, 0.4])
    pos = np.array([[0.1 + 0.2 * i, 5.1, 1.0] for i in range(6)])
    last = np.array([5, 25, 2], dtype=np.int64)
    mask = np.empty(27, dtype=np.uint8)
    costs = np.empty(27)
    ocells = np.empty((27, 3), dtype=np.int64)
    codes = np.empty(27, dtype=np.int64)
    out["successor_scan"] = _timeit(
        lambda: kernels.successor_scan(pos, last, occ, dims, zero3, dims - 1,
                                       np.zeros(3), csz, tab.M, tab.cost_mat(2),
                                       dt, 20.0, dt ** -3, -big, big,
                                       -biga, biga, mask, costs, ocells, codes))
    pts = rng.uniform(0.2, 1.8, size=(256, 3))
    out["collision_scan_256"] = _timeit(
        lambda: kernels.collision_scan(pts, occ, dims, np.zeros(3), csz))
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--compare", action="store_true",
                    help="also run the pure-Python fallback in a subprocess")
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args(argv)

    mine = run_benchmarks()
    if args.json:
        print(json.dumps({"numba": kernels.numba_active(), "times": mine}))
        return 0

    mode = "numba" if kernels.numba_active() else "pure-python"
    if not args.compare:
        print(f"mode: {mode}")
        for name, t in mine.items():
            print(f"{name:20s} {t * 1e6:10.2f} us")
        return 0

    env = dict(os.environ, KINOSPLINE_NO_NUMBA="1")
    res = subprocess.run([sys.executable, "-m", "kinospline.bench_kernels",
                          "--json"], env=env, capture_output=True, text=True)
    other = json.loads(res.stdout)["times"]
    print(f"{'kernel':20s} {'numba':>12s} {'pure':>12s} {'speedup':>9s}")
    for name in mine:
        a, b = mine[name], other[name]
        jit_t, pure_t = (a, b) if kernels.numba_active() else (b, a)
        print(f"{name:20s} {jit_t * 1e6:10.2f} us {pure_t * 1e6:10.2f} us "
              f"{pure_t / jit_t:8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
