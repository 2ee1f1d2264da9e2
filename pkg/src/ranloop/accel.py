"""Numba acceleration switch for the hot simulation kernels.

The per-TTI stepping and scheduler loops dominate runtime, so they are
compiled with numba by default. Setting the environment variable
``RANLOOP_NUMBA=0`` selects a pure-numpy fallback path: the same kernel
source runs un-jitted, producing bit-identical results (all kernel
randomness comes from an integer splitmix64 generator whose wraparound
arithmetic is the same in both paths).

``benchmarks/bench_sim.py`` compares the two paths.
"""

import os

ENV_FLAG = "RANLOOP_NUMBA"

_raw = os.environ.get(ENV_FLAG, "1").strip().lower()
NUMBA_ENABLED = _raw not in ("0", "false", "no", "off")

if NUMBA_ENABLED:
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
        NUMBA_ENABLED = False

if NUMBA_ENABLED:

    def jit_kernel(func):
        """Compile a hot kernel with numba (nopython, cached)."""
        return _njit(cache=True)(func)

else:

    def jit_kernel(func):
        """Fallback: run the kernel as plain Python/numpy."""
        return func
