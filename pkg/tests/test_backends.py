"""The numba kernels and the plain-numpy fallback must produce the same sweeps."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from cpdegen import _accel

SCRIPT = """
import json, sys
from cpdegen import _accel
from cpdegen.regression import FitConfig, fit_multi_start
from cpdegen.synth import SynthSpec, generate_case
data = generate_case(SynthSpec("2a", n=40, p0=3, seed=2)).dataset
out = {"backend": _accel.backend()}
for method in ("LS", "cp_ridge:0.1", "tensor_ridge:0.01"):
    tr = fit_multi_start(data, FitConfig(rank=2, method=method, max_iterations=60, num_starts=2,
                                         seed=1, diagnostics=True))
    out[method] = [tr.objective.tolist(), tr.magnitude.tolist(), tr.lambda_min_D.tolist()]
json.dump(out, sys.stdout)
"""


def run_backend(disable: bool) -> dict:
    env = dict(os.environ)
    env.pop("CPDEGEN_DISABLE_NUMBA", None)
    if disable:
        env["CPDEGEN_DISABLE_NUMBA"] = "1"
    res = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


@pytest.mark.skipif(not _accel.HAS_NUMBA, reason="numba not installed")
def test_numba_matches_numpy():
    fast, slow = run_backend(False), run_backend(True)
    assert fast["backend"] == "numba" and slow["backend"] == "numpy"
    for method in ("LS", "cp_ridge:0.1", "tensor_ridge:0.01"):
        for a, b in zip(fast[method], slow[method]):
            np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


def test_flag_selects_numpy():
    assert run_backend(True)["backend"] == "numpy"
