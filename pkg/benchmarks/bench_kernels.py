"""Benchmark the jitted kernels against the pure-numpy fallback.

Usage:
    python3 benchmarks/bench_kernels.py [--repeat N]

The numpy path is selected per call via the WAVEMORPH_NO_NUMBA env flag,
so both backends run inside one process.
"""

import argparse
import os
import time

import numpy as np


def _timeit(fn, repeat):
    fn()  # warm up (jit compilation, caches)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    from wavemorph import backend, kernels, wavelet

    rng = np.random.default_rng(0)
    fb = wavelet.filter_bank("db2")
    img = rng.random((160, 160))
    x = rng.standard_normal((32, 22, 160, 160))
    w1 = rng.standard_normal((16, 22, 3, 3))
    b1 = rng.standard_normal(16)
    y1 = kernels.conv2d_forward(x, w1, b1, 4)
    gy = rng.standard_normal(y1.shape)
    pooled, idx = kernels.maxpool2_forward(y1)
    taps = fb.low

    cases = [
        ("filter_periodic axis0", lambda: kernels.filter_periodic(img, taps, 2, 0)),
        ("filter_periodic axis1", lambda: kernels.filter_periodic(img, taps, 2, 1)),
        ("decompose_48 160x160", lambda: wavelet.decompose_48(img, fb)),
        ("conv2d_forward 32x22x160^2 s4", lambda: kernels.conv2d_forward(x, w1, b1, 4)),
        ("conv2d_backward_input", lambda: kernels.conv2d_backward_input(gy, w1, 4, 160, 160)),
        ("conv2d_backward_weights", lambda: kernels.conv2d_backward_weights(x, gy, 4, 3)),
        ("maxpool2_forward", lambda: kernels.maxpool2_forward(y1)),
        ("maxpool2_backward", lambda: kernels.maxpool2_backward(
            rng.standard_normal(pooled.shape), idx, y1.shape[2], y1.shape[3])),
    ]

    print(f"{'kernel':<34} {'numba (ms)':>12} {'numpy (ms)':>12} {'speedup':>9}")
    for name, fn in cases:
        os.environ.pop("WAVEMORPH_NO_NUMBA", None)
        t_nb = _timeit(fn, args.repeat) if backend.have_numba() else float("nan")
        os.environ["WAVEMORPH_NO_NUMBA"] = "1"
        t_np = _timeit(fn, args.repeat)
        os.environ.pop("WAVEMORPH_NO_NUMBA", None)
        ratio = t_np / t_nb if t_nb == t_nb and t_nb > 0 else float("nan")
        print(f"{name:<34} {t_nb * 1e3:>12.2f} {t_np * 1e3:>12.2f} {ratio:>8.2f}x")


if __name__ == "__main__":
    main()
