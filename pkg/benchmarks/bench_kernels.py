"""Compiled kernels against the numpy fallback.

Times the two hot loops both backends provide, the characteristic-function
integrands behind every price and the Euler path simulation behind the
Monte Carlo check, and reports the largest disagreement between them.

    python benchmarks/bench_kernels.py [--repeats N]
"""
import argparse
import math
import sys
import time

import numpy as np

from heston_deepcal import _kernels
from heston_deepcal.heston import HestonParams, quadrature_rule

PARAMS = HestonParams(kappa=2.0, theta=0.04, sigma=0.3, rho=-0.7, v0=0.04)
TAU = 0.5


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def flatten(out):
    parts = out if isinstance(out, tuple) else (out,)
    return np.concatenate([np.ravel(np.asarray(x, dtype=complex)) for x in parts])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--paths", type=int, default=20_000)
    ap.add_argument("--steps", type=int, default=100)
    args = ap.parse_args(argv)

    if _kernels.ckernels is None:
        print("compiled extension not built; only the numpy backend is available")
        return 1

    nodes, _ = quadrature_rule()
    p = PARAMS
    key = _kernels.seed_key(0)
    cases = {
        "p_integrands": lambda k: k.p_integrands(nodes, TAU, p.kappa, p.theta, p.sigma, p.rho, p.v0),
        "simulate_log_spot": lambda k: k.simulate_log_spot(
            math.log(100.0), 0.03, p.kappa, p.theta, p.sigma, p.rho, p.v0, TAU, args.steps, key, 0, args.paths
        ),
    }

    print(f"{'kernel':<20}{'numpy [s]':>12}{'cython [s]':>12}{'speedup':>10}{'max diff':>12}")
    for name, call in cases.items():
        t_py, out_py = best_of(lambda: call(_kernels.pykernels), args.repeats)
        t_c, out_c = best_of(lambda: call(_kernels.ckernels), args.repeats)
        diff = float(np.max(np.abs(flatten(out_py) - flatten(out_c))))
        print(f"{name:<20}{t_py:>12.4f}{t_c:>12.4f}{t_py / t_c:>9.1f}x{diff:>12.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
