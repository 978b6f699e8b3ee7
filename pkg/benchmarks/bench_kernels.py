"""Time the numba kernels against the pure-numpy fallback.

Each backend runs in its own interpreter because ``HAMSPEC_DISABLE_NUMBA``
is read at import.  Workloads:

* ``spectrum``: first five eigenvalues of the constant one-dimensional family
  (scalar Riccati kernel with blow-up switching);
* ``riccati``: one backward integration over ``[0, T]`` with dense nodes;
* ``paths``: eigenfunction Monte Carlo, 1000 paths on 4096 steps.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 3] [--paths 1000]
"""

import argparse
import json
import os
import subprocess
import sys
import time

WORKER = r"""
import json, sys, time
import numpy as np
import hamspec
from hamspec.coefficients import CoefficientField, HamiltonianSpec
from hamspec.riccati import integrate_backward
from hamspec.spectrum import eigenvalue_1d
from hamspec.stochastic import simulate_eigenfunction

repeat, n_paths = int(sys.argv[1]), int(sys.argv[2])
H = CoefficientField.from_constants(1, np.pi, {(1, 1): 1.0, (2, 2): -1.0, (3, 3): -1.0, (4, 4): -1.0})
Hb = CoefficientField.from_constants(1, np.pi, {(2, 2): -1.0})
spec = HamiltonianSpec(H=H, Hbar=Hb, Q=[[-1.0, 1.0], [1.0, -1.0]], beta=1.0)
rec = eigenvalue_1d(spec, 1)

def best(fn):
    t0 = time.perf_counter()
    fn()
    first = time.perf_counter() - t0
    runs = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        runs.append(time.perf_counter() - t0)
    return first, min(runs)

out = {"backend": hamspec.backend()}
out["spectrum"] = best(lambda: [eigenvalue_1d(spec, m) for m in range(1, 6)])
out["riccati"] = best(lambda: integrate_backward(np.zeros((1, 1)), np.pi, 0.0, spec, 1.1, "primal", "shift",
                                                 max_step=1e-3))
out["paths"] = best(lambda: simulate_eigenfunction(rec, spec, n_paths, 1, store_paths=0))
print(json.dumps(out))
"""


def run(disable, repeat, paths):
    env = dict(os.environ)
    env.pop("HAMSPEC_DISABLE_NUMBA", None)
    if disable:
        env["HAMSPEC_DISABLE_NUMBA"] = "1"
    proc = subprocess.run([sys.executable, "-c", WORKER, str(repeat), str(paths)], env=env,
                          capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--paths", type=int, default=1000)
    args = ap.parse_args(argv)
    t0 = time.perf_counter()
    results = [run(False, args.repeat, args.paths), run(True, args.repeat, args.paths)]
    print(f"{'workload':<10}{'backend':<8}{'first call [s]':>16}{'best [s]':>12}")
    for name in ("spectrum", "riccati", "paths"):
        for r in results:
            first, best = r[name]
            print(f"{name:<10}{r['backend']:<8}{first:>16.4f}{best:>12.4f}")
        speedup = results[1][name][1] / results[0][name][1]
        print(f"{'':<10}{'speedup':<8}{'':>16}{speedup:>11.1f}x")
    print(f"total wall time {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
