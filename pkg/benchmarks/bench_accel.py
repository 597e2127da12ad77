"""Compare the numba and numpy backends of the hot loops.

Usage::

    python3 benchmarks/bench_accel.py [--repeat 5] [--csv out.csv]

Inputs are sized like the bundled desk-scale experiments: a 216-member
rotated family for the criterion scan, a 400-replication stack of pair tables
for the prefix maxima, and the sub-cell quadrature points of a rotated
order-2 kernel stencil for the kernel evaluation.  Both backends are checked
to agree before timing.
"""

from __future__ import annotations

import argparse
import csv
import sys
import timeit

import numpy as np

from ptselect import _accel
from ptselect.kernels import make_base_kernel


def _cases(rng: np.random.Generator):
    n = 216
    D = np.abs(rng.standard_normal((n, n)))
    thr = rng.uniform(0.1, 1.0, n)
    sig = np.sort(rng.uniform(1.0, 20.0, n))
    yield "criterion_scan", (D, thr, sig, 1e-12)

    stack = np.abs(rng.standard_normal((400, 36, 36)))
    order = rng.permutation(36).astype(np.int64)
    ends = np.array([5, 11, 17, 23, 29, 35], dtype=np.int64)
    yield "level_prefix_max", (stack, order, ends)

    base = make_base_kernel("quartic", 2, 2)
    s = rng.uniform(-0.6, 0.6, size=(60_000, 2))
    yield "separable_sum_eval", (s, base.amplitudes, base.dilations, base.profile.breaks, base.profile.coefs)


def run(repeat: int = 5) -> list[dict]:
    if _accel.numba_impl is None:
        raise SystemExit("numba is not importable; nothing to compare")
    rng = np.random.default_rng(12345)
    rows = []
    for name, args in _cases(rng):
        f_np = getattr(_accel.numpy_impl, name)
        f_nb = getattr(_accel.numba_impl, name)
        ref = f_np(*args)
        got = f_nb(*args)  # also triggers compilation outside the timed region
        err = float(np.max(np.abs(ref - got)))
        t_np = min(timeit.repeat(lambda: f_np(*args), number=1, repeat=repeat))
        t_nb = min(timeit.repeat(lambda: f_nb(*args), number=1, repeat=repeat))
        rows.append({"kernel": name, "numpy_s": t_np, "numba_s": t_nb, "speedup": t_np / t_nb, "max_abs_diff": err})
    return rows


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--csv", help="also write the table as CSV")
    args = p.parse_args(argv)
    rows = run(args.repeat)
    print(f"{'kernel':<20}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>10}{'max |diff|':>13}")
    for r in rows:
        print(f"{r['kernel']:<20}{r['numpy_s']:>12.5f}{r['numba_s']:>12.5f}{r['speedup']:>10.1f}{r['max_abs_diff']:>13.2e}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
