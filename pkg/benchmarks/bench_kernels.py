"""Compiled kernels against their NumPy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5]

Times the simplex driver on inner-bound ray programs (K=3..5) and GF(256)
row reduction on random matrices, and checks both backends agree.
"""
import argparse
import time

import numpy as np

from bcast import _fallback
from bcast.bounds import InnerBound
from bcast.channel import make_spatially_independent
from bcast.gf import GF
from bcast.lp import _Tableau, _optimize, _phase_one

try:
    from bcast import _kernels
except ImportError:  # pragma: no cover
    _kernels = None


def _solve_with(mod, lp):
    import bcast.kernels as k

    names = ("simplex_iterate", "simplex_pivot", "dual_simplex_iterate", "phase_one")
    saved = {name: getattr(k, name) for name in names}
    for name in names:
        setattr(k, name, getattr(mod, name))
    try:
        tab = _Tableau(lp)
        cap = 50 * (lp.num_vars + lp.num_constraints)
        ok, _ = _phase_one(tab, "dantzig", 1e-9, cap, 1e-7)
        assert ok
        tab.drop_artificials()
        tab.perturb(1e-7)
        m = tab.m
        cost = np.zeros(tab.n_real)
        cost[: lp.num_vars] = -lp.objective
        tab.T[m] = 0.0
        tab.T[m, : tab.n_real] = cost
        for i, j in enumerate(tab.basis):
            if cost[j]:
                tab.T[m] -= cost[j] * tab.T[i]
        _optimize(tab, "dantzig", 1e-9, cap, 1e-7)
        return -tab.T[m, -1]
    finally:
        for name, fn in saved.items():
            setattr(k, name, fn)


def _best(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_simplex(repeat):
    rng = np.random.default_rng(0)
    print(f"{'simplex':<22}{'compiled':>12}{'python':>12}{'speed-up':>10}")
    for K in (3, 4, 5):
        ch = make_spatially_independent(rng.uniform(0.1, 0.9, K))
        lp = InnerBound(ch, method="simplex").scale_lp(np.ones(K))
        tc, vc = _best(lambda: _solve_with(_kernels, lp), repeat)
        tp, vp = _best(lambda: _solve_with(_fallback, lp), max(1, repeat // 2))
        assert abs(vc - vp) < 1e-9, (vc, vp)
        print(f"{'K=%d (%dx%d)' % (K, lp.num_constraints, lp.num_vars):<22}{tc * 1e3:>10.2f}ms{tp * 1e3:>10.2f}ms{tp / tc:>9.1f}x")


def bench_rref(repeat):
    gf = GF(8)
    rng = np.random.default_rng(1)
    print(f"{'GF(256) rref':<22}{'compiled':>12}{'python':>12}{'speed-up':>10}")
    for n in (32, 128, 256):
        M = rng.integers(0, 256, size=(n, n)).astype(np.uint16)

        def run(mod):
            A = M.copy()
            piv = mod.gf_rref(A, gf.exp, gf.log, gf.q - 1)
            return A, list(piv)

        tc, (Ac, pc) = _best(lambda: run(_kernels), repeat)
        tp, (Ap, pp) = _best(lambda: run(_fallback), max(1, repeat // 2))
        assert pc == pp and np.array_equal(Ac, Ap)
        print(f"{'%dx%d' % (n, n):<22}{tc * 1e3:>10.2f}ms{tp * 1e3:>10.2f}ms{tp / tc:>9.1f}x")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation` first")
    bench_simplex(args.repeat)
    print()
    bench_rref(args.repeat)


if __name__ == "__main__":
    main()
