"""Time the compiled net kernels against the pure-numpy fallback.

Usage: python benchmarks/bench_kernels.py [--batch 128] [--reps 300]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from bicl.nets import _pykernels

try:
    from bicl.nets import _ckernels
except ImportError:
    _ckernels = None


def _time(fn, reps: int) -> float:
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - start) / reps * 1e6


def bench_backend(kernels, batch: int, reps: int) -> dict:
    rng = np.random.default_rng(0)
    d_in, d_out = 64, 64
    x = rng.standard_normal((batch, d_in))
    w = rng.standard_normal((d_in, d_out)) * 0.1
    b = rng.standard_normal(d_out) * 0.1
    a = kernels.linear_act_forward(x, w, b, kernels.RELU)
    delta = rng.standard_normal((batch, d_out))
    g = rng.standard_normal(w.size + b.size)
    p = rng.standard_normal(w.size + b.size)
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    return {
        "forward": _time(
            lambda: kernels.linear_act_forward(x, w, b, kernels.RELU), reps),
        "act_backward": _time(
            lambda: kernels.act_backward(delta.copy(), a, kernels.RELU), reps),
        "backward": _time(
            lambda: kernels.linear_backward(delta, x, w, True, True), reps),
        "adam": _time(
            lambda: kernels.adam_step(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8,
                                      0.9, 0.999), reps),
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=128)
    parser.add_argument("--reps", type=int, default=300)
    args = parser.parse_args()
    pure = bench_backend(_pykernels, args.batch, args.reps)
    print(f"batch={args.batch} layer=64x64 reps={args.reps} (microseconds/op)")
    if _ckernels is None:
        print("compiled kernels unavailable; pure backend only")
        for op, us in pure.items():
            print(f"{op:>14}: pure {us:8.2f}")
        return 0
    compiled = bench_backend(_ckernels, args.batch, args.reps)
    for op in pure:
        ratio = pure[op] / compiled[op] if compiled[op] else float("inf")
        print(f"{op:>14}: pure {pure[op]:8.2f}  compiled {compiled[op]:8.2f}"
              f"  speedup x{ratio:4.2f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
