#!/usr/bin/env python3
"""Benchmark the compiled world-sim kernels against the vectorized-numpy
fallback path (selected at import time by DWVA_NO_NUMBA=1).

Runs each kernel in a fresh subprocess per backend so the import-time path
selection is honest, then prints a comparison table. Usage:

    python3 benchmarks/bench_kernels.py [--repeat 200]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, os, sys, time
import numpy as np
from latentdrive.world import kernels as K

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
F, A = 9, 3
ego = rng.uniform(2, 14, size=(F, 4))
agents = rng.uniform(2, 14, size=(F, A, 4))
route = np.cumsum(rng.uniform(0.1, 0.8, size=(40, 2)), axis=0)
queries = rng.uniform(0, 16, size=(8, 2))
centerline = route[:20]

cases = {
    "first_collision_frame": lambda: K.first_collision_frame(ego, agents, 0.5, 32, 32),
    "ttc_violation": lambda: K.ttc_violation(ego, agents, 0.5, 1.0, 0.5, 32, 32),
    "polyline_progress": lambda: max(K.polyline_progress(route, q[0], q[1]) for q in queries),
    "corridor_mask": lambda: K.corridor_mask(centerline, 1.75, 0.5, 32, 32),
}

out = {"backend": "numba" if K.USE_NUMBA else "numpy"}
for name, fn in cases.items():
    fn()  # warm (JIT compile / cache load)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    out[name] = (time.perf_counter() - t0) / repeat
print(json.dumps(out))
"""


def run_backend(no_numba, repeat):
    env = dict(os.environ, DWVA_NO_NUMBA="1" if no_numba else "0")
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)],
                         capture_output=True, text=True, env=env, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()

    numba = run_backend(False, args.repeat)
    numpy_ = run_backend(True, args.repeat)
    print(f"{'kernel':<24} {'numba (us)':>12} {'numpy (us)':>12} {'speedup':>9}")
    for name in sorted(k for k in numba if k != "backend"):
        a, b = numba[name] * 1e6, numpy_[name] * 1e6
        print(f"{name:<24} {a:>12.1f} {b:>12.1f} {b / a:>8.1f}x")


if __name__ == "__main__":
    main()
