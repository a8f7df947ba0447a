"""Micro-benchmark: numba kernels vs the pure-numpy fallbacks.

Times the three accelerated kernels (weighted norm reduction, batched norm
reduction, dispersive mode rotation) in both implementations within one
process, then one end-to-end time-stepping run under whichever backend is
active.  Run with the numba path (default)::

    python3 benchmarks/bench_accel.py

and with the fallback, to compare end-to-end numbers across processes::

    NMSHALLOW_DISABLE_NUMBA=1 python3 benchmarks/bench_accel.py
"""
from __future__ import annotations

import math
import time

import numpy as np

from nmshallow import _accel
from nmshallow.fourier_scale import GridSpec, random_field
from nmshallow.green_naghdi import GNState, PhysicalParams
from nmshallow.reference import mol_solve


def best_of(fn, repeats: int = 7) -> float:
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels() -> None:
    rng = np.random.default_rng(0)
    n = 1 << 18
    nt = 64
    abs2 = rng.random(n)
    w = rng.random(n)
    abs2_b = rng.random((nt, n // 64))
    w_b = rng.random(n // 64)
    along = rng.random(n // 4) + 1j * rng.random(n // 4)
    zeta = rng.random(n // 4) + 1j * rng.random(n // 4)
    cos_v = np.cos(rng.random(n // 4))
    sin_v = np.sin(rng.random(n // 4))

    pairs = [
        ("weighted_norm_sq", lambda f: f(abs2, w),
         _accel._np_weighted_norm_sq, _accel._nb_weighted_norm_sq),
        ("weighted_norm_sq_batch", lambda f: f(abs2_b, w_b),
         _accel._np_weighted_norm_sq_batch, _accel._nb_weighted_norm_sq_batch),
        ("rotate_modes", lambda f: f(along, zeta, cos_v, sin_v),
         _accel._np_rotate_modes, _accel._nb_rotate_modes),
    ]
    print(f"{'kernel':<26}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    for name, call, np_fn, nb_fn in pairs:
        t_np = best_of(lambda: call(np_fn))
        if _accel.HAS_NUMBA:
            call(nb_fn)  # trigger JIT before timing
            t_nb = best_of(lambda: call(nb_fn))
            print(f"{name:<26}{t_np * 1e6:>10.1f}us{t_nb * 1e6:>10.1f}us{t_np / t_nb:>9.2f}x")
        else:
            print(f"{name:<26}{t_np * 1e6:>10.1f}us{'n/a':>12}{'n/a':>10}")


def bench_end_to_end() -> None:
    grid = GridSpec(dimension=1, nodes_per_axis=128, domain_length=2 * math.pi)
    params = PhysicalParams(mu=0.3, eps=0.5, b=random_field(
        grid, 1, np.random.default_rng(1), amplitude=0.02, decay=5.0))
    u0 = GNState(
        V=random_field(grid, 1, np.random.default_rng(2), amplitude=0.05, decay=4.0),
        zeta=random_field(grid, 1, np.random.default_rng(3), amplitude=0.05, decay=4.0),
    )
    mol_solve(params, u0, T=0.05, dt=0.005)  # warm caches / JIT
    t = best_of(lambda: mol_solve(params, u0, T=0.5, dt=0.005), repeats=3)
    print(f"\nmol_solve 100 steps, N=128 [{_accel.ACTIVE_BACKEND:>5}]: {t:.3f}s")


if __name__ == "__main__":
    print(f"active backend: {_accel.ACTIVE_BACKEND}")
    bench_kernels()
    bench_end_to_end()
