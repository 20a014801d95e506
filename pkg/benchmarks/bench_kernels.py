"""Compare the numpy and numba kernels on batch sizes typical of large runs.

    python3 benchmarks/bench_kernels.py --rows 100000 --repeat 5

Compilation happens before timing. Prints one line per kernel with the best
time of each backend, the speedup, and the max absolute difference.
"""

from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from salbci import kernels


def _cases(rows: int, labels: int, frames: int, rng: np.random.Generator):
    face = rng.dirichlet(np.ones(labels), size=rows)
    ctx = rng.dirichlet(np.ones(labels), size=rows)
    prior = np.full((rows, labels), 1.0 / labels)
    a = rng.uniform(0.5, 1.0, size=rows)
    b = 1.0 - a
    track = rng.normal(size=(frames, 5))
    return {
        "fuse_log": (face, ctx, prior, a, b),
        "fuse_direct": (face, ctx, prior, a, b),
        "kld_rows": (face, ctx),
        "mean_step": (track,),
    }


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=100_000, help="distribution rows for fusion and KLD")
    p.add_argument("--labels", type=int, default=7)
    p.add_argument("--frames", type=int, default=200_000, help="frames for the step-length kernel")
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    if kernels.numba_kernels is None:
        print("numba is not installed; nothing to compare", file=sys.stderr)
        return 1
    cases = _cases(args.rows, args.labels, args.frames, np.random.default_rng(args.seed))
    print(f"rows={args.rows} labels={args.labels} frames={args.frames} repeat={args.repeat}")
    print(f"{'kernel':<12} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8} {'max diff':>10}")
    for name, call_args in cases.items():
        np_fn = getattr(kernels.numpy_kernels, name)
        nb_fn = getattr(kernels.numba_kernels, name)
        ref, got = np_fn(*call_args), nb_fn(*call_args)  # also compiles
        diff = float(np.max(np.abs(np.asarray(ref) - np.asarray(got))))
        t_np = min(timeit.repeat(lambda: np_fn(*call_args), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: nb_fn(*call_args), number=1, repeat=args.repeat))
        print(f"{name:<12} {t_np * 1e3:>10.2f} {t_nb * 1e3:>10.2f} {t_np / t_nb:>7.1f}x {diff:>10.1e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
