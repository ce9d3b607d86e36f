"""Time the numba and numpy convolution backends on full-resolution layer shapes.

    python benchmarks/bench_kernels.py [--repeat 5] [--batch 8]

Each case runs forward (conv3d or transconv3d) plus the two backward
kernels, and reports the median wall time per backend.
"""

import argparse
import statistics
import time

import numpy as np

from pgbn import kernels

# name, input shape without batch, kernel, stride, cout, op
CASES = [
    ("G last layer (pitch x7)", (4, 96, 12, 8), (1, 1, 7), (1, 1, 7), 8, "transconv3d"),
    ("G time 48->96", (4, 48, 1, 8), (1, 2, 1), (1, 2, 1), 8, "transconv3d"),
    ("D first layer (pitch /7)", (4, 96, 84, 8), (1, 1, 7), (1, 1, 7), 8, "conv3d"),
    ("refiner conv 1->64", (4, 98, 86, 1), (1, 3, 3), (1, 1, 1), 64, "conv3d"),
    ("refiner conv 64->1", (4, 98, 86, 64), (1, 3, 3), (1, 1, 1), 1, "conv3d"),
]


def _inputs(shape, ksize, cout, op, batch, rng):
    x = rng.standard_normal((batch,) + shape).astype(np.float32)
    cin = shape[-1]
    # transconv weights map cin -> cout, laid out as (k..., cout, cin)
    kshape = ksize + ((cin, cout) if op == "conv3d" else (cout, cin))
    return x, rng.standard_normal(kshape).astype(np.float32)


def _run_case(x, k, ksize, stride, op):
    if op == "conv3d":
        y = kernels.conv3d(x, k, stride)
        kernels.transconv3d(y, k, stride)
        kernels.conv3d_kernel_grad(x, y, stride, ksize)
    else:
        y = kernels.transconv3d(x, k, stride)
        kernels.conv3d(y, k, stride)
        kernels.conv3d_kernel_grad(y, x, stride, ksize)


def bench(backend, repeat, batch):
    kernels.set_backend(backend)
    rng = np.random.default_rng(0)
    out = {}
    for name, shape, ksize, stride, cout, op in CASES:
        x, k = _inputs(shape, ksize, cout, op, batch, rng)
        _run_case(x, k, ksize, stride, op)  # warm-up / JIT
        times = []
        for _ in range(repeat):
            t0 = time.perf_counter()
            _run_case(x, k, ksize, stride, op)
            times.append(time.perf_counter() - t0)
        out[name] = statistics.median(times)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=8)
    args = ap.parse_args()

    backends = kernels.available_backends()
    results = {b: bench(b, args.repeat, args.batch) for b in backends}
    width = max(len(c[0]) for c in CASES)
    print(f"{'case':<{width}}  " + "  ".join(f"{b:>10}" for b in backends) +
          ("  speedup" if len(backends) == 2 else ""))
    for name, *_ in CASES:
        row = [results[b][name] for b in backends]
        line = f"{name:<{width}}  " + "  ".join(f"{t * 1e3:8.1f}ms" for t in row)
        if len(backends) == 2:
            line += f"  {results['numpy'][name] / results['numba'][name]:6.2f}x"
        print(line)


if __name__ == "__main__":
    main()
