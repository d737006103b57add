"""Compare the compiled and NumPy kernels on the same solver run.

Usage: python3 benchmarks/bench_kernels.py [--N 10] [--M 200] [--d 10] [--iters 20000]
"""
import argparse
import time

import numpy as np

from pddistiag import Schedule, build_mixing, init_state
from pddistiag._backend import available
from pddistiag.cli import ExperimentConfig, build_problem
from pddistiag.solver import run_steps


def bench(backend, mom, mix, iters, gamma1, repeats):
    best = np.inf
    for _ in range(repeats):
        st = init_state(mom, mix, gamma1)
        t0 = time.perf_counter()
        run_steps(st, mom, mix, Schedule("cyclic", mom.M), iters, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, st


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, default=10)
    ap.add_argument("--M", type=int, default=200)
    ap.add_argument("--d", type=int, default=10)
    ap.add_argument("--iters", type=int, default=20000)
    ap.add_argument("--gamma1", type=float, default=1e-3)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    mom, _ = build_problem(ExperimentConfig(
        seed=0, n_agents=args.N, n_samples=args.M, feature_dim=args.d, rho=0.01))
    mix = build_mixing("ring", args.N)
    results = {}
    for name in available():
        secs, st = bench(name, mom, mix, args.iters, args.gamma1, args.repeats)
        results[name] = (secs, st)
        print(f"{name:>7}: {secs:8.3f} s  {1e6 * secs / args.iters:8.2f} us/iter")
    if len(results) == 2:
        (tc, sc), (tp, spy) = results["cython"], results["python"]
        diff = max(np.abs(sc.theta - spy.theta).max(), np.abs(sc.w - spy.w).max())
        print(f"speedup {tp / tc:.1f}x, max iterate difference {diff:.1e}")


if __name__ == "__main__":
    main()
