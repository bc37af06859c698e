"""Time the compiled LSTM recurrence kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each case runs layer_forward followed by layer_backward on random inputs
and reports the best wall time per backend plus the speedup.
"""

import argparse
import json
import platform
import sys
import timeit

import numpy as np

from phenoseq import _lstm_kernels_py as python_backend
from phenoseq import kernels

CASES = [(48, 16), (48, 32), (360, 32), (720, 32), (360, 128)]  # (T, H)


def make_inputs(T, H, seed=0):
    rng = np.random.default_rng(seed)
    xproj = rng.normal(0.0, 0.5, (T, 4 * H))
    U = rng.normal(0.0, 1.0 / np.sqrt(H), (4 * H, H))
    dh = np.zeros((T, H))
    dh[-1] = rng.normal(size=H)
    return xproj, U, dh


def fwd_bwd(backend, xproj, U, dh):
    acts, c, _ = backend.layer_forward(xproj, U)
    return backend.layer_backward(acts, c, U, dh, 0)


def best_time(backend, args, repeat):
    number = 3
    times = timeit.repeat(lambda: fwd_bwd(backend, *args), number=number, repeat=repeat)
    return min(times) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)

    compiled = kernels.compiled_backend
    if compiled is None:
        print("compiled kernels are not available; build with "
              "`pip install -e . --no-build-isolation`", file=sys.stderr)
    rows = []
    print(f"{'T':>5} {'H':>5} {'python ms':>11} {'cython ms':>11} {'speedup':>8}")
    for T, H in CASES:
        inputs = make_inputs(T, H)
        py = best_time(python_backend, inputs, args.repeat)
        row = {"T": T, "H": H, "python_s": py}
        if compiled is not None:
            # both backends must agree before their timings mean anything
            np.testing.assert_allclose(fwd_bwd(compiled, *inputs), fwd_bwd(python_backend, *inputs),
                                       rtol=1e-10, atol=1e-12)
            cy = best_time(compiled, inputs, args.repeat)
            row.update(cython_s=cy, speedup=py / cy)
            print(f"{T:>5} {H:>5} {py * 1e3:>11.2f} {cy * 1e3:>11.2f} {py / cy:>7.1f}x")
        else:
            print(f"{T:>5} {H:>5} {py * 1e3:>11.2f} {'-':>11} {'-':>8}")
        rows.append(row)
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump({"python": platform.python_version(), "numpy": np.__version__,
                       "results": rows}, fh, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
