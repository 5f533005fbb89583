"""Time the closed-loop rollout kernel with numba and with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--steps 2000] [--repeats 5]

Each backend runs in its own interpreter because the backend is fixed at import
time by DGSMPC_DISABLE_NUMBA.
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
from dgsmpc._accel import backend_name
from dgsmpc.bank import OperatorBank
from dgsmpc.controller import ControllerConfig
from dgsmpc.model import coupled_tank_model
from dgsmpc.simulation import Simulator
from dgsmpc.synthesis import default_grid, generate_gain_library

steps, repeats, grid = int(sys.argv[1]), int(sys.argv[2]), int(sys.argv[3])
model = coupled_tank_model()
lib = generate_gain_library(model, default_grid(grid))
bank = OperatorBank.from_library(model, lib)
out = {"backend": backend_name()}
for mode in ("fixed", "method1", "method2"):
    sim = Simulator(model, lib, ControllerConfig(mode=mode, initial_policy=1e-15), [-1.0, 3.0], bank=bank)
    W = sim.disturbances(1, steps)
    t0 = time.perf_counter()
    sim.rollout(W)  # includes compilation on the numba side
    first = time.perf_counter() - t0
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        tr = sim.rollout(W)
        best = min(best, time.perf_counter() - t0)
    out[mode] = {"first_s": first, "best_s": best, "us_per_step": 1e6 * best / steps,
                 "J": float(tr.STAGE.mean())}
print(json.dumps(out))
"""


def run_backend(disable: bool, steps: int, repeats: int, grid: int) -> dict:
    env = dict(os.environ)
    env["DGSMPC_DISABLE_NUMBA"] = "1" if disable else "0"
    proc = subprocess.run([sys.executable, "-c", WORKER, str(steps), str(repeats), str(grid)],
                          env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--grid", type=int, default=2000)
    args = ap.parse_args()

    t0 = time.perf_counter()
    fast = run_backend(False, args.steps, args.repeats, args.grid)
    slow = run_backend(True, args.steps, args.repeats, args.grid)
    print(f"{'mode':<8} {'numba us/step':>14} {'numpy us/step':>14} {'speedup':>8} {'|dJ|/J':>10}")
    for mode in ("fixed", "method1", "method2"):
        a, b = fast[mode], slow[mode]
        rel = abs(a["J"] - b["J"]) / abs(b["J"])
        print(f"{mode:<8} {a['us_per_step']:>14.2f} {b['us_per_step']:>14.2f} "
              f"{b['best_s'] / a['best_s']:>8.1f} {rel:>10.2e}")
    print(f"backends: {fast['backend']} vs {slow['backend']}; total {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
