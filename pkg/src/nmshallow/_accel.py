"""Optional numba-accelerated kernels with pure-numpy fallbacks.

The hot non-FFT kernels of the library live here: Sobolev-weighted norm
reductions and the per-mode rotation that applies the free dispersive
evolution. Each kernel has two implementations:

* a plain numpy version (always available), and
* a numba ``@njit`` version compiled lazily on first use.

Selection happens at import time: the numba path is used when numba imports
cleanly and the environment variable ``NMSHALLOW_DISABLE_NUMBA`` is unset
(or set to ``0``/``""``). ``ACTIVE_BACKEND`` records the choice so callers
(and the benchmark in ``benchmarks/bench_accel.py``) can report it.
"""
from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("NMSHALLOW_DISABLE_NUMBA", "") not in ("", "0")

try:  # pragma: no cover - exercised via the env-flag fallback test
    if _DISABLED:
        raise ImportError("numba disabled by NMSHALLOW_DISABLE_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        """No-op decorator stand-in used when numba is unavailable."""

        def wrap(func):
            return func

        if len(args) == 1 and callable(args[0]):
            return args[0]
        return wrap


ACTIVE_BACKEND = "numba" if HAS_NUMBA else "numpy"


# ----------------------------------------------------------------- numpy path

def _np_weighted_norm_sq(abs2: np.ndarray, weights: np.ndarray) -> float:
    return float(np.dot(abs2, weights))


def _np_weighted_norm_sq_batch(abs2: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return abs2 @ weights


def _np_rotate_modes(along, zeta, cos_v, sin_v):
    a_new = cos_v * along - 1j * (sin_v * zeta)
    z_new = cos_v * zeta - 1j * (sin_v * along)
    return a_new, z_new


# ----------------------------------------------------------------- numba path

@njit(cache=True)
def _nb_weighted_norm_sq(abs2, weights):  # pragma: no cover - numba-compiled
    total = 0.0
    for i in range(abs2.shape[0]):
        total += abs2[i] * weights[i]
    return total


@njit(cache=True)
def _nb_weighted_norm_sq_batch(abs2, weights):  # pragma: no cover
    nt, nm = abs2.shape
    out = np.empty(nt)
    for t in range(nt):
        total = 0.0
        for i in range(nm):
            total += abs2[t, i] * weights[i]
        out[t] = total
    return out


@njit(cache=True)
def _nb_rotate_modes(along, zeta, cos_v, sin_v):  # pragma: no cover
    n = along.shape[0]
    a_new = np.empty_like(along)
    z_new = np.empty_like(zeta)
    for i in range(n):
        c = cos_v[i]
        s = sin_v[i]
        a_new[i] = c * along[i] - 1j * (s * zeta[i])
        z_new[i] = c * zeta[i] - 1j * (s * along[i])
    return a_new, z_new


# ----------------------------------------------------------------- dispatch

if HAS_NUMBA:
    weighted_norm_sq = _nb_weighted_norm_sq
    weighted_norm_sq_batch = _nb_weighted_norm_sq_batch
    rotate_modes = _nb_rotate_modes
else:
    weighted_norm_sq = _np_weighted_norm_sq
    weighted_norm_sq_batch = _np_weighted_norm_sq_batch
    rotate_modes = _np_rotate_modes

# The numpy implementations stay importable under their private names so the
# benchmark (and tests) can compare both paths in a single process.
