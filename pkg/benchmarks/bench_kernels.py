"""Compiled vs numpy closure kernel timings.

    python3 benchmarks/bench_kernels.py [--repeat R]

Both kernels receive the same alpha batch and Gauss-Legendre rule; the
script checks that their outputs agree before timing them.
"""

import argparse
import timeit

import numpy as np

from radlab import _closure_py
from radlab.closure import gauss_legendre

try:
    from radlab import _closure_core
except ImportError:
    _closure_core = None


def agree(a, b):
    return max(float(np.max(np.abs(a[k] - b[k]) / np.maximum(1.0, np.abs(b[k])))) for k in a)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    rng = np.random.Generator(np.random.Philox(0))
    print(f"{'N':>3} {'nodes':>5} {'batch':>6} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8} {'max diff':>9}")
    for N in (3, 6):
        for nodes in (32, 128):
            for batch in (1, 64, 512):
                a = rng.uniform(-0.5, 0.5, batch)
                x, w = gauss_legendre(nodes)
                t_py = min(timeit.repeat(lambda: _closure_py.closure_batch(a, N, x, w), number=1,
                                         repeat=args.repeat)) * 1e3
                if _closure_core is None:
                    print(f"{N:>3} {nodes:>5} {batch:>6} {t_py:>10.3f} {'n/a':>10}")
                    continue
                diff = agree(_closure_core.closure_batch(a, N, x, w), _closure_py.closure_batch(a, N, x, w))
                t_cy = min(timeit.repeat(lambda: _closure_core.closure_batch(a, N, x, w), number=1,
                                         repeat=args.repeat)) * 1e3
                print(f"{N:>3} {nodes:>5} {batch:>6} {t_py:>10.3f} {t_cy:>10.3f} {t_py / t_cy:>8.2f} {diff:>9.1e}")


if __name__ == "__main__":
    main()
