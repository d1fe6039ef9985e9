"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py                 # Ballroom-sized layers
    python benchmarks/bench_kernels.py --preset small  # quick run

Times conditional-layer forward and backward (masked, as in the shipped
Ballroom config), plain matmul and the row FFT used by the STFT. Reports the
median of ``--repeat`` runs per backend and the compiled/python ratio.
"""

import argparse
import statistics
import time

import numpy as np

from mclnn import kernels
from mclnn.masking import MaskSpec, build_mask
from mclnn.numerics import _twiddles

PRESETS = {
    # (batch, q, l, e, n, bw, ov) per conditional layer
    "ballroom": [(50, 71, 256, 220, 15, 40, -10), (50, 41, 220, 200, 15, 10, 3)],
    "small": [(16, 12, 32, 24, 1, 8, 2), (16, 10, 24, 16, 1, 6, 2)],
}


def timeit(fn, repeat):
    fn()  # warm-up
    runs = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        runs.append(time.perf_counter() - t0)
    return statistics.median(runs)


def cases(preset):
    r = np.random.default_rng(0)
    for i, (batch, q, l, e, n, bw, ov) in enumerate(PRESETS[preset]):
        mask = build_mask(MaskSpec(l, e, bw, ov))
        z = r.normal(size=(2 * n + 1, l, e)) * mask.pattern
        x = r.normal(size=(batch, q, l))
        delta = r.normal(size=(batch, q - 2 * n, e))
        runs = mask.column_runs
        yield f"layer{i + 1} forward", lambda m, x=x, z=z, runs=runs: m.clnn_forward(x, z, runs)
        yield f"layer{i + 1} backward", lambda m, x=x, z=z, d=delta, runs=runs: m.clnn_backward(x, z, d, runs)
    a, b = r.normal(size=(256, 200)), r.normal(size=(200, 50))
    yield "matmul 256x200x50", lambda m: m.matmul(a, b)
    frames = r.normal(size=(64, 2048)).astype(np.complex128)
    tw = _twiddles(2048, False)
    yield "fft 64x2048", lambda m: m.fft_rows(frames.copy(), tw)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", choices=sorted(PRESETS), default="ballroom")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    names = sorted(kernels.AVAILABLE)
    print(f"preset {args.preset}, median of {args.repeat}; backends: {', '.join(names)}")
    header = f"{'kernel':<22}" + "".join(f"{n:>12}" for n in names)
    if len(names) == 2:
        header += f"{'ratio':>8}"
    print(header)
    for label, fn in cases(args.preset):
        times = {n: timeit(lambda: fn(kernels.get(n)), args.repeat) for n in names}
        row = f"{label:<22}" + "".join(f"{times[n] * 1e3:>10.2f}ms" for n in names)
        if len(names) == 2:
            row += f"{times['compiled'] / times['python']:>8.2f}"
        print(row)


if __name__ == "__main__":
    main()
