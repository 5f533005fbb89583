"""The numpy fallback must reproduce the compiled kernels to rounding level."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from dgsmpc import _accel, kernels

SCRIPT = r"""
import json
import numpy as np
from dgsmpc._accel import backend_name
from dgsmpc.controller import ControllerConfig
from dgsmpc.model import coupled_tank_model
from dgsmpc.simulation import monte_carlo
from dgsmpc.synthesis import default_grid, generate_gain_library

m = coupled_tank_model()
lib = generate_gain_library(m, default_grid(80))
out = {"backend": backend_name()}
for mode in ("fixed", "method1", "method2"):
    r = monte_carlo(m, lib, ControllerConfig(mode=mode, initial_policy=1e-15), [-1.0, 3.0], 4, 120, base_seed=9)
    out[mode] = [r.J_average, r.P_violation, r.mu_final_mean]
print(json.dumps(out))
"""


def run(disable):
    env = dict(os.environ, DGSMPC_DISABLE_NUMBA="1" if disable else "0")
    proc = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


@pytest.mark.skipif(not _accel.NUMBA_ENABLED, reason="numba not importable")
def test_numpy_fallback_matches_numba():
    fast, slow = run(False), run(True)
    assert fast["backend"] == "numba" and slow["backend"] == "numpy"
    for mode in ("fixed", "method1", "method2"):
        assert np.allclose(fast[mode], slow[mode], rtol=1e-10, atol=0.0)


def test_secular_solve_unconstrained_and_active():
    d = np.array([1.0, 2.0])
    a = np.array([1.0, -1.0])
    b = np.zeros(2)
    # g(lam) = sum d_i y_i^2 + const with y = -(a + lam b) / (1 + lam d)
    status, lam, y, g, _ = kernels.secular_solve(d, a, b, -10.0, 0.0, 1e-12, 1e-12, 200)
    assert status == kernels.UNCONSTRAINED and lam == 0.0
    status, lam, y, g, _ = kernels.secular_solve(d, a, b, -1.0, 0.0, 1e-12, 1e-12, 200)
    assert status == kernels.ACTIVE
    ref = 1.0 / (1 + lam) ** 2 + 2.0 / (1 + 2 * lam) ** 2 - 1.0
    assert abs(ref) < 1e-10 and lam > 0
