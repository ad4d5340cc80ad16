"""Compiled vs numpy kernels on training-sized inputs.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from mmimpute import _pykernels as py

try:
    from mmimpute import _ckernels as ck
except ImportError:
    ck = None


def cases():
    rng = np.random.default_rng(0)
    x = rng.random((64, 8, 34, 34)).astype(np.float32)       # a conv stage on a 64-patch batch
    cols = py.im2col(x, 4, 2)
    n = 200
    y = rng.integers(0, 2, n)
    g = np.unique(rng.standard_normal(n), return_inverse=True)[1].astype(np.int64)
    counts = rng.integers(0, 3, (2000, n)).astype(np.float64)  # one bootstrap test
    return {
        "im2col 64x8x34x34 k4 s2": lambda m: m.im2col(x, 4, 2),
        "col2im (adjoint)": lambda m: m.col2im(cols, 64, 8, 34, 34, 4, 2),
        "grouped_auc 2000x200": lambda m: m.grouped_auc(counts, g, y, int(g.max()) + 1),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"{'kernel':28s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in cases().items():
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat)) * 1e3
        if ck is None:
            print(f"{name:28s} {t_py:10.2f} {'n/a':>10s}")
            continue
        t_c = min(timeit.repeat(lambda: fn(ck), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:28s} {t_py:10.2f} {t_c:10.2f} {t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()
