"""Time the numba kernels against the pure-numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

The backend used by the package is picked at import time; set SATRL_NUMBA=0
to force the numpy path.
"""

import argparse
import time

import numpy as np

from satrl.dynamics import SatelliteParams
from satrl.kernels import _numba, _numpy


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_integrate(mod, repeat, steps=200):
    p = SatelliteParams()
    args = (np.array(p.inertia_diag), p.rw_inertia, p.rw_saturation_speed, True)
    q = np.array([0.9, 0.1, -0.3, 0.2])
    q /= np.linalg.norm(q)
    w = np.array([0.01, -0.02, 0.015])
    rw = np.array([100.0, -50.0, 20.0])
    tau = np.array([1e-3, -5e-4, 2e-4])

    def run():
        qq, ww, rr = q, w, rw
        for _ in range(steps):
            qq, ww, rr, _, _ = mod.integrate(qq, ww, rr, tau, 0.5, 100, *args)

    run()  # compile
    return best_of(run, repeat) / steps


def bench_gae(mod, repeat, n=15000):
    rng = np.random.default_rng(0)
    r, v = rng.normal(size=n), rng.normal(size=n)
    d = (rng.random(n) < 0.002).astype(float)
    mod.gae(r, v, d, 0.0, 0.99, 0.95)
    return best_of(lambda: mod.gae(r, v, d, 0.0, 0.99, 0.95), repeat)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rows = [("integrate (one 0.5 s step, 100 substeps)", bench_integrate),
            ("gae (15000 transitions)", bench_gae)]
    print(f"{'kernel':44s} {'numba':>12s} {'numpy':>12s} {'speedup':>8s}")
    for name, fn in rows:
        a, b = fn(_numba, args.repeat), fn(_numpy, args.repeat)
        print(f"{name:44s} {a * 1e6:10.1f}us {b * 1e6:10.1f}us {b / a:7.1f}x")


if __name__ == "__main__":
    main()
