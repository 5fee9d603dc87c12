"""Time the compiled kernels against their pure-Python fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel and input size with the best-of-N time for each
backend and the speedup. Exits with status 1 if the compiled extension is
not built.
"""

import argparse
import sys
import timeit

import numpy as np

from intention_tuning import _kernels_py

try:
    from intention_tuning import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    for n in (4, 32, 64, 256):
        values = np.sort(rng.exponential(size=n)).tolist()
        yield "variance_split", n, (values,)
    for n in (20, 100, 400):
        a = rng.integers(0, 30, size=n).tolist()
        b = rng.integers(0, 30, size=n).tolist()
        yield "lcs_length", n, (a, b)


def best_time(fn, args, repeat):
    number = max(1, int(0.02 / max(timeit.timeit(lambda: fn(*args), number=1), 1e-7)))
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<16}{'n':>6}{'python (us)':>14}{'cython (us)':>14}{'speedup':>10}")
    for name, n, inputs in cases(rng):
        py_fn, cy_fn = getattr(_kernels_py, name), getattr(_kernels, name)
        if py_fn(*inputs) != cy_fn(*inputs):
            print(f"{name} n={n}: backends disagree", file=sys.stderr)
            return 1
        t_py = best_time(py_fn, inputs, args.repeat)
        t_cy = best_time(cy_fn, inputs, args.repeat)
        print(f"{name:<16}{n:>6}{t_py * 1e6:>14.1f}{t_cy * 1e6:>14.1f}{t_py / t_cy:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
