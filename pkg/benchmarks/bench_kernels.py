#!/usr/bin/env python3
"""Benchmark the compiled kernels against the NumPy fallback.

Times the two hot paths, the pairwise cosine-distance matrix and the fused
gated forward/backward training step, at a few realistic sizes and prints
the per-call times plus the compiled/NumPy speedup.

Usage: python benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from duckling.kernels import pure

try:
    from duckling.kernels import _fast as compiled
except ImportError:
    compiled = None


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def bench_distance(repeats):
    rng = np.random.default_rng(0)
    print(f"{'cosine_distance_matrix':<34} {'numpy':>10} {'compiled':>10} {'speedup':>8}")
    for n, d in ((16, 64), (16, 2304), (64, 512), (200, 512), (400, 2304)):
        x = rng.uniform(0.01, 1.0, (n, d))
        t_pure = best_of(lambda: pure.cosine_distance_matrix(x), repeats)
        if compiled is None:
            print(f"  N={n:<4} D={d:<24} {t_pure*1e3:9.3f}ms {'-':>10} {'-':>8}")
            continue
        t_fast = best_of(lambda: compiled.cosine_distance_matrix(x), repeats)
        assert np.abs(pure.cosine_distance_matrix(x) - compiled.cosine_distance_matrix(x)).max() <= 1e-12
        print(f"  N={n:<4} D={d:<24} {t_pure*1e3:9.3f}ms {t_fast*1e3:9.3f}ms {t_pure/t_fast:7.2f}x")


def bench_train_step(repeats):
    rng = np.random.default_rng(1)
    print(f"\n{'gated forward+backward step':<34} {'numpy':>10} {'compiled':>10} {'speedup':>8}")
    for nb, nd, na, nh in ((1, 64, 64, 32), (64, 64, 64, 32), (512, 512, 64, 32), (2048, 512, 64, 32)):
        x = rng.uniform(0.0, 1.0, (nb, nd))
        gate = rng.uniform(0.0, 1.0, nb)
        y = rng.integers(0, 2, nb).astype(float)
        w = np.full(nb, 1.0 / nb)
        wa = rng.normal(0.0, 0.2, (na, nd))
        ba = rng.normal(0.0, 0.1, na)
        wh = rng.normal(0.0, 0.2, (nh, na))
        bh = rng.normal(0.0, 0.1, nh)
        wo = rng.normal(0.0, 0.2, nh)
        bo = np.array([0.0])

        def step(impl):
            fwd = impl.gated_forward(x, gate, wa, ba, wh, bh, wo, bo)
            impl.gated_backward(x, gate, y, w, wa, wh, wo, *fwd, 2.0, 0.25)

        t_pure = best_of(lambda: step(pure), repeats)
        if compiled is None:
            print(f"  B={nb:<5} D={nd:<4} {na}x{nh:<13} {t_pure*1e3:9.3f}ms {'-':>10} {'-':>8}")
            continue
        t_fast = best_of(lambda: step(compiled), repeats)
        print(f"  B={nb:<5} D={nd:<4} {na}x{nh:<13} {t_pure*1e3:9.3f}ms {t_fast*1e3:9.3f}ms {t_pure/t_fast:7.2f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    if compiled is None:
        print("compiled extension not built; showing NumPy fallback times only\n")
    bench_distance(args.repeats)
    bench_train_step(args.repeats)


if __name__ == "__main__":
    main()
