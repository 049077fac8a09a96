"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N] [--size PX]

Also checks that both backends return identical results on the inputs used.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from sweepqa import _kernels_py

try:
    from sweepqa import _kernels
except ImportError:
    _kernels = None

from sweepqa.sweep import PlacentaLabel, PresentationLabel, SweepTag
from sweepqa.synthgen import GenParams, generate_sweep


def cases(size: int):
    params = GenParams(n_patients=1, split_sizes=(0, 0, 1), frame_h=size, frame_w=size)
    sweep = generate_sweep(1, SweepTag.C2, PresentationLabel.CEPHALIC, PlacentaLabel.ANTERIOR, params)
    frames = np.ascontiguousarray(sweep.frames)
    half = size // 2
    return [
        ("row_centroids", lambda k: k.row_centroids(frames)),
        (f"resize {size}->{half}", lambda k: k.resize_bilinear(frames, half, half)),
        (f"resize {size}->{size * 3 // 2}", lambda k: k.resize_bilinear(frames, size * 3 // 2, size * 3 // 2)),
    ]


def same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return a.dtype == b.dtype and np.array_equal(a, b)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--size", type=int, default=224)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled extension not built; only the python backend is available")
    print(f"{'kernel':<20} {'python ms':>10} {'compiled ms':>12} {'speedup':>8}  identical")
    for name, fn in cases(args.size):
        py = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat)) * 1e3
        if _kernels is None:
            print(f"{name:<20} {py:10.2f} {'--':>12} {'--':>8}  --")
            continue
        cy = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat)) * 1e3
        ok = same(fn(_kernels_py), fn(_kernels))
        print(f"{name:<20} {py:10.2f} {cy:12.2f} {py / cy:7.1f}x  {'yes' if ok else 'NO'}")


if __name__ == "__main__":
    main()
