"""Compare the numba and numpy backends of the slot recursion and the dual ascent.

    python3 benchmarks/bench_kernels.py [--horizon N] [--repeat R]
"""
import argparse
import time

import numpy as np

from dpptavg import kernels
from dpptavg._backend import HAS_NUMBA
from dpptavg.engine import RunConfig, run
from dpptavg.instances import load_builtin


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_run(problem, horizon, repeat):
    cfg = RunConfig(100.0, horizon, seed=0)
    res = {}
    for backend in ("numba", "numpy"):
        if backend == "numba" and not HAS_NUMBA:
            continue
        run(problem, RunConfig(100.0, 10, 0), backend=backend)  # warm-up / compile
        res[backend] = best_of(lambda: run(problem, cfg, backend=backend), repeat)
    if len(res) == 2:
        a, b = res["numba"][1], res["numpy"][1]
        assert np.array_equal(a.x, b.x) and np.allclose(a.Z, b.Z, rtol=0, atol=1e-9)
    return {k: v[0] for k, v in res.items()}


def bench_ascent(problem, iterations, repeat):
    p = problem.packed()
    lam0 = np.random.default_rng(0).uniform(0, 1, (16, problem.J + problem.I))
    res = {}
    for backend in ("numba", "numpy"):
        if backend == "numba" and not HAS_NUMBA:
            continue

        def go(n=iterations):
            bl, bv = np.empty_like(lam0), np.empty(len(lam0))
            hist = np.empty((len(lam0), n))
            kernels.ascent(p["points"], p["offsets"], problem.probs, p["fq"], p["fl"], p["f0"], p["gq"], p["gl"],
                           p["g0"], p["lower"], p["upper"], lam0, 1.0, 0.01, n, np.nan, 0, bl, bv, hist,
                           backend=backend)
            return bv

        go(5)
        res[backend] = best_of(go, repeat)[0]
    return res


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--horizon", type=int, default=200_000)
    ap.add_argument("--iterations", type=int, default=5_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    problem = load_builtin("sim-linear")
    print(f"{'kernel':<22}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")
    for name, res in ((f"dpp_loop T={args.horizon}", bench_run(problem, args.horizon, args.repeat)),
                      (f"ascent 16x{args.iterations}", bench_ascent(problem, args.iterations, args.repeat))):
        nb, npy = res.get("numba", float("nan")), res["numpy"]
        print(f"{name:<22}{nb:>12.4f}{npy:>12.4f}{npy / nb:>9.1f}x")


if __name__ == "__main__":
    main()
