"""Time the compiled and pure-Python MFE kernels on random sequences.

Usage::

    python3 benchmarks/bench_kernels.py --lengths 32 64 128 --repeats 3
"""

import argparse
import time

import numpy as np

from sold import _fold_py
from sold.fold import DEFAULT_ENERGY, encode_seq

try:
    from sold import _fold_ext
except ImportError:
    _fold_ext = None


def run_kernel(mod, codes, pm, hp):
    V = mod.mfe_fill(codes, pm, hp)
    mod.mfe_traceback(codes, pm, hp, V)
    return V[0, len(codes)]


def best_of(mod, codes, pm, hp, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        energy = run_kernel(mod, codes, pm, hp)
        times.append(time.perf_counter() - t0)
    return min(times), energy


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--lengths", type=int, nargs="+", default=[32, 64, 128])
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    pm = np.ascontiguousarray(DEFAULT_ENERGY.pair_matrix())
    hp = DEFAULT_ENERGY.hairpin_min
    if _fold_ext is None:
        print("compiled kernel not built; timing the Python fallback only")
    print(f"{'L':>5} {'python_s':>10} {'cython_s':>10} {'speedup':>8}")
    for L in args.lengths:
        codes = encode_seq("".join(rng.choice(list("AUCG"), size=L)))
        t_py, e_py = best_of(_fold_py, codes, pm, hp, args.repeats)
        if _fold_ext is None:
            print(f"{L:>5} {t_py:>10.4f} {'-':>10} {'-':>8}")
            continue
        t_cy, e_cy = best_of(_fold_ext, codes, pm, hp, args.repeats)
        assert e_py == e_cy, (L, e_py, e_cy)
        print(f"{L:>5} {t_py:>10.4f} {t_cy:>10.6f} {t_py / t_cy:>7.0f}x")


if __name__ == "__main__":
    main()
