"""Compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--size 512] [--repeat 5]

Prints the median wall time of each kernel on both paths, the speed ratio
and the largest absolute disagreement between the two outputs.
"""

import argparse
import sys
import timeit

import numpy as np

from mlekit import kernels
from mlekit.spectral import PAPER_WAVELENGTHS, Unmixer, absorbance, load_extinction
from mlekit.synthlab import gen_spectral_scene, gen_static_speckle


def _cases(size: int, rng):
    table = load_extinction().aligned(PAPER_WAVELENGTHS)
    sto2 = rng.uniform(0.0, 1.0, (size, size))
    A, _ = absorbance(gen_spectral_scene(sto2, rng.uniform(2e-6, 2e-5, (size, size)), noise=0.01, seed=rng))
    um = Unmixer(table)
    H = np.ascontiguousarray((A.reshape(8, -1).T - A.reshape(8, -1).T.mean(axis=1, keepdims=True)) @ um.Ec)
    speckle = np.ascontiguousarray(gen_static_speckle((size, size), seed=rng))
    n_lab = size * size
    lab1 = np.column_stack([rng.uniform(0, 100, n_lab), rng.uniform(-80, 80, n_lab), rng.uniform(-80, 80, n_lab)])
    lab2 = np.clip(lab1 + rng.normal(0, 5, lab1.shape), [0, -128, -128], [100, 128, 128])
    return {
        "nnls_gram": ((um.G, H), lambda out: out),
        "local_contrast": ((speckle, 5), lambda out: np.stack(out)),
        "ciede2000": ((lab1, lab2), lambda out: out),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=512, help="image side; kernels see size**2 pixels")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if kernels.BACKEND != "cython":
        print("compiled extension not built; only the fallback is available", file=sys.stderr)
        return 1
    from mlekit import _kernels

    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<16}{'pixels':>10}{'cython ms':>12}{'numpy ms':>12}{'ratio':>8}{'max |diff|':>13}")
    for name, (inputs, stack) in _cases(args.size, rng).items():
        fast = getattr(_kernels, name)
        slow = getattr(kernels.fallback, name)
        t_fast = np.median(timeit.repeat(lambda: fast(*inputs), number=1, repeat=args.repeat)) * 1e3
        t_slow = np.median(timeit.repeat(lambda: slow(*inputs), number=1, repeat=args.repeat)) * 1e3
        diff = np.max(np.abs(stack(fast(*inputs)) - stack(slow(*inputs))))
        print(f"{name:<16}{args.size ** 2:>10}{t_fast:>12.2f}{t_slow:>12.2f}{t_slow / t_fast:>8.2f}{diff:>13.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
