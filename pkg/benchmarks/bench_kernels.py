"""Time full ALS sweeps under the numba kernels and the plain-numpy fallback.

    python3 benchmarks/bench_kernels.py [--sweeps 2000] [--n 200] [--p0 5] [--rank 2]

Each backend runs in its own interpreter because the choice is made at import
time from ``CPDEGEN_DISABLE_NUMBA``.  The numba timing excludes compilation.
"""

import argparse
import json
import os
import subprocess
import sys

CHILD = """
import json, sys, time
from cpdegen import _accel
from cpdegen.regression import FitConfig, fit_single, initial_factors
from cpdegen.synth import SynthSpec, generate_case
n, p0, rank, sweeps = map(int, sys.argv[1:5])
data = generate_case(SynthSpec("1a", n=n, p0=p0, seed=0)).dataset
init = initial_factors(data.dims, rank, 0)
fit_single(data, FitConfig(rank=rank, max_iterations=2), init)  # compile / warm up
t0 = time.perf_counter()
trace = fit_single(data, FitConfig(rank=rank, max_iterations=sweeps), init)
dt = time.perf_counter() - t0
json.dump({"backend": _accel.backend(), "seconds": dt, "final_objective": trace.final_objective}, sys.stdout)
"""


def time_backend(disable: bool, args) -> dict:
    env = dict(os.environ)
    env.pop("CPDEGEN_DISABLE_NUMBA", None)
    if disable:
        env["CPDEGEN_DISABLE_NUMBA"] = "1"
    argv = [str(v) for v in (args.n, args.p0, args.rank, args.sweeps)]
    res = subprocess.run([sys.executable, "-c", CHILD, *argv], env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sweeps", type=int, default=2000)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--p0", type=int, default=5)
    p.add_argument("--rank", type=int, default=2)
    args = p.parse_args()
    results = [time_backend(False, args), time_backend(True, args)]
    print(f"{'backend':8s} {'seconds':>9s} {'us/sweep':>9s} {'final objective':>22s}")
    for r in results:
        print(f"{r['backend']:8s} {r['seconds']:9.3f} {1e6 * r['seconds'] / args.sweeps:9.1f} {r['final_objective']:22.15g}")
    if results[0]["backend"] == "numba":
        print(f"speedup: {results[1]['seconds'] / results[0]['seconds']:.1f}x")


if __name__ == "__main__":
    main()
