"""Time the GRU sequence kernels: numpy reference vs compiled extension.

    python3 benchmarks/bench_kernels.py [--repeat N] [--quick]

Each row is one forward plus backward pass over a ``T x B x D`` batch with
state size ``H``; the best of ``--repeat`` runs is reported.
"""

import argparse
import sys
import time

import numpy as np

from subjadapt import _gru_ref

try:
    from subjadapt import _gru_ext
except ImportError:
    _gru_ext = None

# (T, B, D, H): toy, synthetic-default training step, larger batch, full-size
SHAPES = [
    (5, 8, 6, 4),
    (160, 5, 16, 16),
    (160, 25, 16, 16),
    (160, 605, 16, 16),
    (160, 64, 128, 128),
]


def best_time(impl, X, W, U, b, gH, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        cache = impl.gru_forward(X, W, U, b)
        impl.gru_backward(gH, X, W, U, *cache)
        best = min(best, time.perf_counter() - start)
    return best


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--quick", action="store_true", help="Skip the full-size shape.")
    args = parser.parse_args(argv)
    if _gru_ext is None:
        print("compiled extension not built; only the numpy reference is timed", file=sys.stderr)

    shapes = SHAPES[:-1] if args.quick else SHAPES
    print(f"{'T':>4} {'B':>4} {'D':>4} {'H':>4} {'numpy s':>10} {'compiled s':>11} {'speedup':>8}"
          f" {'max diff':>9}")
    for T, B, D, H in shapes:
        rng = np.random.default_rng(0)
        X = rng.normal(size=(T, B, D))
        W = rng.normal(size=(3 * H, D)) / np.sqrt(D)
        U = rng.normal(size=(3 * H, H)) / np.sqrt(H)
        b = 0.1 * rng.normal(size=3 * H)
        gH = rng.normal(size=(B, H))
        t_ref = best_time(_gru_ref, X, W, U, b, gH, args.repeat)
        if _gru_ext is None:
            print(f"{T:>4} {B:>4} {D:>4} {H:>4} {t_ref:>10.5f} {'-':>11} {'-':>8} {'-':>9}")
            continue
        t_ext = best_time(_gru_ext, X, W, U, b, gH, args.repeat)
        ref = _gru_ref.gru_backward(gH, X, W, U, *_gru_ref.gru_forward(X, W, U, b))
        ext = _gru_ext.gru_backward(gH, X, W, U, *_gru_ext.gru_forward(X, W, U, b))
        diff = max(float(np.max(np.abs(a - e))) for a, e in zip(ref[1:], ext[1:]))
        print(f"{T:>4} {B:>4} {D:>4} {H:>4} {t_ref:>10.5f} {t_ext:>11.5f} "
              f"{t_ref / t_ext:>7.2f}x {diff:>9.1e}")


if __name__ == "__main__":
    main()
