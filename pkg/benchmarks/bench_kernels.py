"""Compare the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one row per kernel with the best-of-N time for each backend, the
speedup, and whether the two outputs are bit-identical.
"""
import argparse
import timeit

import numpy as np

from quadfuse import _pykernels as py
from quadfuse.kernels import compiled_backend as cy

SIZE = 64


def _cases():
    rng = np.random.default_rng(0)
    img_u8 = rng.integers(0, 256, (SIZE, SIZE), dtype=np.uint8)
    img_f32 = rng.random((3, SIZE, SIZE), dtype=np.float32)
    theta = np.deg2rad(12.0)
    c, s = np.cos(theta) / 1.05, np.sin(theta) / 1.05
    seed = np.array([1, 2, 3, 4], dtype=np.uint64)

    def rng_u64(mod, n=SIZE * SIZE):
        def run():
            out = np.empty(n, dtype=np.uint64)
            mod.xoshiro_fill_u64(seed.copy(), out)
            return out
        return run

    def rng_uniform(mod, n=SIZE * SIZE):
        def run():
            out = np.empty(n, dtype=np.float64)
            mod.xoshiro_fill_uniform(seed.copy(), out)
            return out
        return run

    return [
        ("xoshiro_fill_u64 (4096)", rng_u64),
        ("xoshiro_fill_uniform (4096)", rng_uniform),
        ("equalize_u8 (64x64)", lambda mod: lambda: mod.equalize_u8(img_u8)),
        ("warp_bilinear (3x64x64)", lambda mod: lambda: mod.warp_bilinear(img_f32, True, c, -s, s, c)),
    ]


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=20)
    args = ap.parse_args()
    if cy is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    print(f"{'kernel':30s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}  identical")
    for name, make in _cases():
        f_py, f_cy = make(py), make(cy)
        same = np.array_equal(f_py(), f_cy())
        t_py = best_of(f_py, args.repeat, args.number)
        t_cy = best_of(f_cy, args.repeat, args.number)
        print(f"{name:30s} {t_py * 1e3:10.3f} {t_cy * 1e3:10.3f} {t_py / t_cy:7.1f}x  {same}")


if __name__ == "__main__":
    main()
