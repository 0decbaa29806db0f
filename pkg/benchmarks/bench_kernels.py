"""Benchmark the compiled vs numpy convolution kernels on shapes matching
the training workload (encoder, block and synthesis convolutions).

Run: python benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from voicelink.nn import _kernels_np

try:
    from voicelink.nn import _convkern
except ImportError:
    _convkern = None

CASES = [
    # (label, cin, cout, k, stride, padding, t_in)
    ("encoder 1x64 k32 s16, 1 s audio", 1, 64, 32, 16, 0, 16000),
    ("block 64x64 k3 s1, 1000 frames", 64, 64, 3, 1, 1, 1000),
    ("mask head 64x256 k1, 1000 frames", 64, 256, 1, 1, 0, 1000),
]


def bench(fn, *args, repeats: int) -> float:
    fn(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    backends = {"numpy": _kernels_np}
    if _convkern is not None:
        backends["compiled"] = _convkern
    else:
        print("compiled extension not built; benchmarking numpy only")

    rng = np.random.default_rng(0)
    print(f"{'case':<40} {'op':<12} " +
          " ".join(f"{b + ' (ms)':>14}" for b in backends))
    for label, cin, cout, k, stride, padding, t_in in CASES:
        x = rng.standard_normal((cin, t_in))
        w = rng.standard_normal((cout, cin, k))
        t_out = (t_in + 2 * padding - k) // stride + 1
        gy = rng.standard_normal((cout, t_out))
        ops = {
            "fwd": lambda b: bench(b.conv1d_fwd, x, w, stride, padding,
                                   repeats=args.repeats),
            "bwd_x": lambda b: bench(b.conv1d_bwd_x, gy, w, stride, padding, t_in,
                                     repeats=args.repeats),
            "bwd_w": lambda b: bench(b.conv1d_bwd_w, gy, x, stride, padding, k,
                                     repeats=args.repeats),
        }
        for op, runner in ops.items():
            times = [runner(impl) for impl in backends.values()]
            print(f"{label:<40} {op:<12} " +
                  " ".join(f"{1e3 * t:>14.3f}" for t in times))

    # Cross-check agreement between backends on the last case.
    if _convkern is not None:
        y_np = _kernels_np.conv1d_fwd(x, w, stride, padding)
        y_cy = _convkern.conv1d_fwd(x, w, stride, padding)
        print(f"\nmax |numpy - compiled| on fwd: {np.max(np.abs(y_np - y_cy)):.3e}")


if __name__ == "__main__":
    main()
