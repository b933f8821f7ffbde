"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--rows 1890] [--cols 256] [--repeat 20]
"""
import argparse
import timeit

import numpy as np

from dercfr import _kernels_py

try:
    from dercfr import _kernels
except ImportError:
    _kernels = None


def cases(rows, cols, rng):
    x = rng.standard_normal((rows, cols))
    g = rng.standard_normal((rows, cols))
    y = _kernels_py.elu_forward(x)
    gamma, beta = rng.uniform(0.5, 1.5, cols), rng.standard_normal(cols)
    _, xhat, _, _, inv = _kernels_py.batchnorm_forward(x, gamma, beta, 1e-5)
    a = rng.standard_normal((300, 16))
    b = rng.standard_normal((250, 16)) + 0.3
    wa, wb = np.full(300, 1 / 300), np.full(250, 1 / 250)
    return {
        "elu_forward": (x,),
        "elu_backward": (g, x, y),
        "sigmoid_forward": (x,),
        "batchnorm_forward": (x, gamma, beta, 1e-5),
        "batchnorm_backward": (g, xhat, inv, gamma),
        "rbf_mmd": (a, b, wa, wb, 2.0),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--rows", type=int, default=1890)
    ap.add_argument("--cols", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, inputs in cases(args.rows, args.cols, rng).items():
        t_py = min(timeit.repeat(lambda: getattr(_kernels_py, name)(*inputs), number=1,
                                 repeat=args.repeat)) * 1e3
        if _kernels is None:
            print(f"{name:<20} {t_py:>10.3f} {'n/a':>10} {'':>8}")
            continue
        t_cy = min(timeit.repeat(lambda: getattr(_kernels, name)(*inputs), number=1,
                                 repeat=args.repeat)) * 1e3
        print(f"{name:<20} {t_py:>10.3f} {t_cy:>10.3f} {t_py / t_cy:>7.2f}x")


if __name__ == "__main__":
    main()
