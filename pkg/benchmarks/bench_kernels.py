"""Compare the compiled kernels with the pure-Python fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat N]

Times the affine discrete iteration and the affine flow integration on
both backends and prints wall times and the speedup.
"""

import argparse
import time

import numpy as np

from monoflow import _backend
from monoflow.flow import IntegratorConfig, integrate
from monoflow.operators import build_saddle_example2, example1_operator
from monoflow.schedules import BetaSchedule, SolverParams
from monoflow.stepper import run_discrete


def discrete_case(backend):
    op = example1_operator()
    p = SolverParams(r=1, alpha=8, theta=0.24)
    run_discrete(op, BetaSchedule.constant(), p, k_max=20_000, origin=op.known_zero, backend=backend)


def flow_case(backend):
    op = build_saddle_example2(10)
    p = SolverParams(r=1, alpha=8, theta=0.25)
    integrate(op, BetaSchedule.power(1.0), p, IntegratorConfig(200.0, rtol=1e-10),
              origin=op.known_zero, backend=backend)


def best_time(fn, backend, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(backend)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if not _backend.compiled_available():
        print("compiled extension not built; only the python backend is available")
    print(f"{'case':<28}{'python [s]':>12}{'compiled [s]':>14}{'speedup':>10}")
    for name, fn in (("discrete_affine k=2e4", discrete_case), ("integrate_affine T=200", flow_case)):
        tp = best_time(fn, "python", args.repeat)
        if _backend.compiled_available():
            tc = best_time(fn, "compiled", args.repeat)
            print(f"{name:<28}{tp:>12.4f}{tc:>14.4f}{tp / tc:>10.1f}")
        else:
            print(f"{name:<28}{tp:>12.4f}{'-':>14}{'-':>10}")


if __name__ == "__main__":
    main()
