"""Compare the compiled and numpy bootstrap kernels.

Usage::

    python benchmarks/bench_kernels.py [--B 2000] [--repeat 5]

Prints the best wall time per backend for a few problem sizes and the
maximum absolute difference between their t-statistics.
"""

import argparse
import time

import numpy as np

from fpcrboot._kernels import available_backends, replicate_batch

SIZES = [  # (n, r, h, k, targets)
    (50, 15, 4, 3, 1),
    (200, 15, 6, 4, 1),
    (1000, 15, 8, 6, 6),
]


def problem(n, r, L, B, seed=0):
    rng = np.random.default_rng(seed)
    lam = 2.0 * np.arange(1, r + 1, dtype=float) ** -2.5
    scores = rng.standard_normal((n, r)) * np.sqrt(lam)
    scores -= scores.mean(axis=0)
    y = scores @ rng.standard_normal(r) + rng.standard_normal(n)
    y -= y.mean()
    idx = rng.integers(0, n, size=(B, n))
    targets = rng.standard_normal((L, r))
    return scores, y, idx, targets


def bench(backend, args, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = replicate_batch(*args, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--B", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=5)
    a = ap.parse_args(argv)
    backends = available_backends()
    print(f"backends: {', '.join(backends)}; B={a.B}, best of {a.repeat}")
    print(f"{'n':>6} {'r':>3} {'h':>3} {'k':>3} {'L':>3} "
          + " ".join(f"{b + ' [s]':>12}" for b in backends) + f" {'speedup':>8} {'max|dt|':>9}")
    for n, r, h, k, L in SIZES:
        scores, y, idx, targets = problem(n, r, L, a.B)
        u = np.zeros(r)
        centers = np.zeros(L)
        args = (scores, y, idx, u, targets, centers, h, k, True)
        res = {b: bench(b, args, a.repeat) for b in backends}
        times = [res[b][0] for b in backends]
        if len(backends) == 2:
            t0, t1 = res["cython"][1][0], res["python"][1][0]
            diff = float(np.nanmax(np.abs(t0 - t1)))
            speed = f"{times[1] / times[0]:8.1f}x"
        else:
            diff, speed = float("nan"), f"{'n/a':>9}"
        print(f"{n:>6} {r:>3} {h:>3} {k:>3} {L:>3} "
              + " ".join(f"{t:12.4f}" for t in times) + f" {speed} {diff:9.1e}")


if __name__ == "__main__":
    main()
