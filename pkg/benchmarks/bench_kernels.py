"""Compare the compiled and NumPy log-sum-exp kernels and a full Sinkhorn solve.

Usage: ``python3 benchmarks/bench_kernels.py [--sizes 256 1024 2304] [--repeat 5]``.
The Sinkhorn timings run each backend in a fresh interpreter, since the
backend is fixed at import.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from entmonge import _kernels_py

try:
    from entmonge import _kernels as _kernels_cy
except ImportError:  # extension not built
    _kernels_cy = None

SOLVE = """
import json, time
from entmonge import kernels
from entmonge.experiments import full_eot
from entmonge.instances import make_two_boxes
from entmonge.measures import GridSpec
g = GridSpec({h}, {h})
t0 = time.perf_counter()
r = full_eot(make_two_boxes(2, 3.0), g, {eps}, threads={threads})
print(json.dumps({{"backend": kernels.BACKEND, "seconds": time.perf_counter() - t0,
                  "iters": r.iters, "objective": r.objective}}))
"""


def bench_lse(n, eps, repeat, threads):
    rng = np.random.default_rng(0)
    C = rng.uniform(0, 3, (n, n))
    a = rng.normal(size=n)
    out = np.empty(n)
    rows = {}
    for impl in [_kernels_py] + ([_kernels_cy] if _kernels_cy is not None else []):
        t = min(timeit.repeat(lambda: impl.lse_rows(C, a, 1 / eps, out, threads), number=3, repeat=repeat)) / 3
        rows[impl.BACKEND] = t
    return rows


def bench_solve(h, eps, threads):
    rows = {}
    for pure in ("1", "0"):
        env = dict(os.environ, ENTMONGE_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", SOLVE.format(h=h, eps=eps, threads=threads)], env=env,
                             capture_output=True, text=True, check=True)
        rec = json.loads(out.stdout)
        rows[rec["backend"]] = rec
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[256, 1024, 2304])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--eps", type=float, nargs="+", default=[0.2, 0.01])
    p.add_argument("--solve-h", type=float, nargs="+", default=[1 / 16, 1 / 32])
    args = p.parse_args(argv)

    print(f"{'kernel n':>10} {'eps':>6} {'numpy [ms]':>12} {'cython [ms]':>12} {'speedup':>8}")
    for eps in args.eps:
        for n in args.sizes:
            r = bench_lse(n, eps, args.repeat, args.threads)
            cy = r.get("cython", float("nan"))
            print(f"{n:>10d} {eps:>6g} {1e3 * r['numpy']:>12.2f} {1e3 * cy:>12.2f} {r['numpy'] / cy:>8.2f}")

    print(f"\n{'solve h':>10} {'eps':>6} {'numpy [s]':>12} {'cython [s]':>12} {'speedup':>8} {'|d objective|':>14}")
    for eps in args.eps:
        for h in args.solve_h:
            r = bench_solve(h, eps, args.threads)
            npy, cy = r["numpy"], r.get("cython", r["numpy"])
            diff = abs(npy["objective"] - cy["objective"])
            print(f"{h:>10.4g} {eps:>6g} {npy['seconds']:>12.2f} {cy['seconds']:>12.2f} "
                  f"{npy['seconds'] / cy['seconds']:>8.2f} {diff:>14.1e}")


if __name__ == "__main__":
    main()
