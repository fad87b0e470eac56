"""Compiled vs pure-Python kernels.

    python3 benchmarks/bench_kernels.py [--repeat N]

Times ``box_sum_solve`` (the per-vehicle and per-appliance projection) and
``uc_dp`` (the per-unit commitment DP) on the same random inputs for both
backends and checks that they return the same answers.
"""
import argparse
import timeit

import numpy as np

from gridkit import _kernels_py

try:
    from gridkit import _kernels as _compiled
except ImportError:
    _compiled = None


def box_inputs(rng, n):
    c = rng.normal(size=n) * 3
    w = rng.uniform(0.1, 2.0, n)
    lo = rng.uniform(-1, 0, n)
    hi = lo + rng.uniform(0, 2, n)
    return c, w, lo, hi, float(rng.uniform(lo.sum(), hi.sum()))


def dp_inputs(rng, T, K, t_up=3, t_down=2):
    stage = rng.normal(size=(T, K))
    idx = np.arange(K)
    compat = (np.abs(idx[:, None] - idx[None, :]) <= K // 4).astype(np.uint8)
    init_compat = np.ones(K, dtype=np.uint8)
    return stage, compat, init_compat, 1.5, t_up, t_down, False


def bench(name, fn_py, fn_c, args, repeat):
    t_py = min(timeit.repeat(lambda: fn_py(*args), number=1, repeat=repeat))
    if fn_c is None:
        print(f"{name:<28} python {t_py * 1e3:9.3f} ms   compiled: not built")
        return
    a, b = fn_py(*args), fn_c(*args)
    same = all(np.allclose(x, y, atol=1e-12) for x, y in zip(a, b))
    t_c = min(timeit.repeat(lambda: fn_c(*args), number=1, repeat=repeat))
    print(f"{name:<28} python {t_py * 1e3:9.3f} ms   compiled {t_c * 1e3:9.3f} ms   "
          f"speed-up {t_py / t_c:7.1f}x   same={same}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    a = ap.parse_args()
    rng = np.random.default_rng(0)
    c = _compiled
    for n in (24, 96, 1000):
        bench(f"box_sum_solve n={n}", _kernels_py.box_sum_solve, c and c.box_sum_solve, box_inputs(rng, n), a.repeat)
    for T, K in ((24, 11), (24, 21), (48, 41)):
        bench(f"uc_dp T={T} K={K}", _kernels_py.uc_dp, c and c.uc_dp, dp_inputs(rng, T, K), a.repeat)


if __name__ == "__main__":
    main()
