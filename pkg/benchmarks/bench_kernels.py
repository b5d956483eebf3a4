"""Compare the compiled and numpy vol2col/col2vol kernels.

    python benchmarks/bench_kernels.py [--repeat N]

Shapes follow the voxel encoder and decoder layers at D=32.  Each case checks
that both backends return identical arrays before timing them.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from switchvae.numerics.kernels import compiled_available, get_impl

# (batch, channels, padded spatial, kernel, stride)
CASES = [
    ("conv1 D=32", 4, 1, 34, 3, 1),
    ("conv2 D=32", 4, 8, 34, 3, 2),
    ("conv3 D=16", 4, 16, 18, 3, 1),
    ("conv4 D=16", 4, 32, 18, 3, 2),
]


def _out(size, k, s):
    return (size - k) // s + 1


def run(repeat: int) -> list[tuple[str, str, float, float]]:
    rng = np.random.default_rng(0)
    backends = ["numpy"] + (["compiled"] if compiled_available() else [])
    rows = []
    for name, n, c, p, k, s in CASES:
        xp = rng.standard_normal((n, c, p, p, p))
        o = _out(p, k, s)
        out_shape = (o, o, o)
        ref_cols = get_impl("numpy").vol2col(xp, (k, k, k), (s, s, s), out_shape)
        ref_vol = get_impl("numpy").col2vol(ref_cols, xp.shape, (k, k, k), (s, s, s), out_shape)
        for b in backends:
            impl = get_impl(b)
            cols = impl.vol2col(xp, (k, k, k), (s, s, s), out_shape)
            vol = impl.col2vol(cols, xp.shape, (k, k, k), (s, s, s), out_shape)
            assert np.array_equal(cols, ref_cols) and np.array_equal(vol, ref_vol), f"{b} differs on {name}"
            t_fwd = min(timeit.repeat(lambda: impl.vol2col(xp, (k, k, k), (s, s, s), out_shape),
                                      number=1, repeat=repeat))
            t_bwd = min(timeit.repeat(lambda: impl.col2vol(cols, xp.shape, (k, k, k), (s, s, s), out_shape),
                                      number=1, repeat=repeat))
            rows.append((name, b, t_fwd, t_bwd))
    return rows


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rows = run(args.repeat)
    print(f"{'case':<12} {'backend':<9} {'vol2col ms':>11} {'col2vol ms':>11}")
    for name, b, f, g in rows:
        print(f"{name:<12} {b:<9} {f * 1e3:>11.2f} {g * 1e3:>11.2f}")
    if not compiled_available():
        print("compiled kernels not built; only the numpy backend was timed")


if __name__ == "__main__":
    main()
