"""Numba kernels against the pure-numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 50] [--closed-loop]

Kernel timings run both implementations in one process.  ``--closed-loop``
additionally times the straight-line scenario end to end in two child
processes, one with ``VESSEL_EMPC_NUMBA=0``.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from vessel_empc import kernels
from vessel_empc.vessel import VesselParams

CHILD = """
import time, numpy as np
from vessel_empc import harness, kernels
sc = harness.scenario_from_dict({"environment": {"start": [0, 0], "goal": [0, 10]},
                                 "initial_state": [0, 0, np.pi / 2, 0, 0, 0], "empc": {"R_delta": [5, 5]}})
t = time.perf_counter()
log = harness.run(sc)
print(kernels.USE_NUMBA, time.perf_counter() - t, log.status, repr(log.totals()["energy"]))
"""


def _time(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_table(repeat):
    rng = np.random.default_rng(0)
    p = VesselParams().as_array()
    X = rng.normal(size=(100, 8))
    W = rng.normal(size=(100, 2))
    C = rng.uniform(-10, 10, size=(40, 2))
    R = np.full(40, 0.92)
    Pb = rng.uniform(-10, 10, size=(500, 4, 2))
    cases = [
        ("rk4 (100 stages)", lambda: kernels.rk4_np(X, W, 0.2, p), lambda: kernels.rk4_nb(X, W, 0.2, p)),
        ("rk4_jac (100 stages)", lambda: kernels.rk4_jac_np(X, W, 0.2, p), lambda: kernels.rk4_jac_nb(X, W, 0.2, p)),
        ("hull clearance (500 cubics, 40 discs)", lambda: kernels.hull_clearance_batch_np(Pb, C, R),
         lambda: kernels.hull_clearance_batch_nb(Pb, C, R)),
    ]
    rows = []
    for name, f_np, f_nb in cases:
        t_np, t_nb = _time(f_np, repeat), _time(f_nb, repeat)
        rows.append((name, t_np, t_nb))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--closed-loop", action="store_true")
    args = ap.parse_args(argv)
    if not kernels.USE_NUMBA:
        print("numba disabled (VESSEL_EMPC_NUMBA=0): the *_nb kernels run as plain Python")
    print(f"{'kernel':40s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, t_np, t_nb in kernel_table(args.repeat):
        print(f"{name:40s} {1e3 * t_np:10.3f} {1e3 * t_nb:10.3f} {t_np / t_nb:8.1f}")
    if args.closed_loop:
        for flag in ("1", "0"):
            env = dict(os.environ, VESSEL_EMPC_NUMBA=flag)
            out = subprocess.run([sys.executable, "-c", CHILD], env=env, capture_output=True, text=True, check=True)
            numba_on, wall, status, energy = out.stdout.split()
            label = "numba" if numba_on == "True" else "numpy"
            print(f"closed loop, straight 10 m, {label:5s}: {float(wall):6.2f} s wall, {status}, energy {energy} J")


if __name__ == "__main__":
    main()
