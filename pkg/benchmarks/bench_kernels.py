"""Time the compiled kernels against the NumPy fallback.

    python benchmarks/bench_kernels.py [--n 60] [--h 0.25] [--repeat 20]

Prints one line per kernel with the median time per call of each backend
and the speedup, then the time of a full minimization with each backend.
"""

import argparse
import statistics
import time

import numpy as np

from qgdefect import kernels
from qgdefect.energy import minimize
from qgdefect.experiments import grid_setup


def _median_time(fn, repeat):
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return statistics.median(ts)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=60, help="grid window half-width")
    ap.add_argument("--h", type=float, default=0.25)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--solve-n", type=int, default=20, help="window for the end-to-end solve")
    args = ap.parse_args(argv)

    f = grid_setup(args.n, args.h).forms()
    rng = np.random.default_rng(0)
    u = rng.standard_normal(f.n)
    dofs = f.defect_dofs()
    w = np.ones(len(dofs))
    grad = np.empty_like(u)
    m = f.mesh
    a, b = [], []
    for nodes in m.edge_nodes:
        a.extend(nodes[:-1])
        b.extend(nodes[1:])
    a, b = np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64)
    h = np.full(len(a), args.h)
    full = f.expand(u)

    cases = {
        "energy_grad": lambda: kernels.energy_grad(f.K, u, dofs, w, 3.0, grad),
        "quad_form": lambda: kernels.quad_form(f.M, u, u),
        "gauss_lp": lambda: kernels.gauss_lp(a, b, h, full, 3.0),
    }
    backends = kernels.available_backends()
    prev = kernels.backend_name()
    print(f"grid n={args.n} h={args.h}: {f.n} free DOF, nnz(K)={f.K.nnz}; backends {backends}")
    try:
        for name, fn in cases.items():
            times = {}
            for be in backends:
                kernels.use_backend(be)
                fn()
                times[be] = _median_time(fn, args.repeat)
            line = "  ".join(f"{be} {times[be] * 1e3:8.3f} ms" for be in backends)
            if len(times) == 2:
                line += f"  speedup {times['python'] / times['compiled']:5.1f}x"
            print(f"{name:12s} {line}")
        s = grid_setup(args.solve_n, 0.5)
        for be in backends:
            kernels.use_backend(be)
            t0 = time.perf_counter()
            r = minimize(s.forms(), 3.0, 40.0)
            print(f"solve n={args.solve_n} ({be}): {time.perf_counter() - t0:.2f} s, E={r.energy:.10f}")
    finally:
        kernels.use_backend(prev)


if __name__ == "__main__":
    main()
