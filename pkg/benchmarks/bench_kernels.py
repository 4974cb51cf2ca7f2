"""Compare the compiled and pure-Python kernels.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5]

Prints the best-of-N wall time per kernel and backend, plus the speed-up and
the largest disagreement between the two outputs.
"""

import argparse
import timeit

import numpy as np

from magloc import _pykernels

try:
    from magloc import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases(rng):
    # roughly one simulated dataset: 7 transmitters x 3 coils plus distorters
    src = rng.uniform(0, 10, (30, 3))
    mom = rng.normal(0, 1, (30, 3))
    pts = rng.uniform(0, 10, (1000, 3))
    yield "dipole_fields 1000x30", (src, mom, pts), lambda out: out

    # a degree-3 fingerprint design on 300 training samples
    X = rng.standard_normal((300, 84))
    X -= X.mean(0)
    y = X[:, :5] @ rng.standard_normal(5) + 0.1 * rng.standard_normal(300)
    y -= y.mean()
    yield "lasso_cd 300x84", (X, y, 0.01, 1e-8, 10000), lambda out: out[0]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<24}{'python':>12}{'cython':>12}{'speed-up':>10}{'max diff':>12}")
    for name, call_args, pick in cases(rng):
        fn = name.split()[0]
        py = getattr(_pykernels, fn)
        t_py = min(timeit.repeat(lambda: py(*call_args), number=1, repeat=args.repeat))
        if _ckernels is None:
            print(f"{name:<24}{t_py * 1e3:>10.2f}ms{'n/a':>12}")
            continue
        cy = getattr(_ckernels, fn)
        t_cy = min(timeit.repeat(lambda: cy(*call_args), number=1, repeat=args.repeat))
        diff = float(np.max(np.abs(pick(py(*call_args)) - pick(cy(*call_args)))))
        print(f"{name:<24}{t_py * 1e3:>10.2f}ms{t_cy * 1e3:>10.2f}ms{t_py / t_cy:>9.1f}x{diff:>12.1e}")


if __name__ == "__main__":
    main()
