"""Compare the numba and numpy kernel twins.

    python benchmarks/bench_kernels.py [--repeats 7] [--json out.json]

Each kernel runs on a representative problem size. The compiled twin is
warmed up once before timing so JIT compilation is reported separately.
"""
import argparse
import json
import statistics
import sys
import time

import numpy as np

from taililc import _kernels
from taililc.plant import PlantConfig, build_controller, build_plant
from taililc.lti import process_sensitivity


def _median(fn, repeats):
    ts = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return statistics.median(ts)


def problems():
    cfg = PlantConfig(5.0, ((150.0, 0.03, 0.05),), 1e-3)
    J = process_sensitivity(build_plant(cfg), build_controller(cfg))
    A, B, C, D = (np.ascontiguousarray(x) for x in (J.A, J.B, J.C, J.D))
    rng = np.random.default_rng(0)
    u = rng.standard_normal((1, 20000))
    h = _kernels.np_markov(A, B, C, D, 2000)
    snap = np.zeros(20833)
    snap[100:300] = 1e4
    snap[300:500] = -1e4
    return {
        "ss_simulate (N=20000)": ("ss_simulate", (A, B, C, D, u)),
        "markov (n=20000)": ("markov", (A, B, C, D, 20000)),
        "toeplitz_lower (N=2000)": ("toeplitz_lower", (h, 2000)),
        "integrate_snap (n=20833)": ("integrate_snap", (snap, 1.2e-4)),
    }


def _as_tuple(x):
    return x if isinstance(x, tuple) else (x,)


def run(repeats=7):
    rows = []
    for label, (name, args) in problems().items():
        np_fn = getattr(_kernels, f"np_{name}")
        nb_fn = getattr(_kernels, f"nb_{name}")
        t0 = time.perf_counter()
        out_nb = nb_fn(*args)
        warm = time.perf_counter() - t0
        out_np = np_fn(*args)
        diff = max(float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(a)))))
                   for a, b in zip(_as_tuple(out_np), _as_tuple(out_nb)))
        t_np = _median(lambda: np_fn(*args), repeats)
        t_nb = _median(lambda: nb_fn(*args), repeats)
        rows.append({"kernel": label, "numpy_s": t_np, "numba_s": t_nb, "speedup": t_np / t_nb,
                     "first_call_s": warm, "max_rel_diff": diff})
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=7)
    ap.add_argument("--json", default=None)
    args = ap.parse_args(argv)
    if not _kernels.HAVE_NUMBA:
        print("numba is not installed; nothing to compare", file=sys.stderr)
        return 1
    rows = run(args.repeats)
    print(f"{'kernel':<28}{'numpy':>12}{'numba':>12}{'speedup':>10}{'1st call':>11}{'max rel diff':>14}")
    for r in rows:
        print(f"{r['kernel']:<28}{r['numpy_s'] * 1e3:>10.3f}ms{r['numba_s'] * 1e3:>10.3f}ms"
              f"{r['speedup']:>9.1f}x{r['first_call_s']:>10.2f}s{r['max_rel_diff']:>14.1e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
