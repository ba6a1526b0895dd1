"""Numba/numpy backend selection for the hot kernels.

The accelerated kernels live in :mod:`hessian_lab.kernels`; each has a numba
``@njit`` implementation and a pure-numpy twin. Selection happens once at
import time:

* ``HESSIAN_LAB_BACKEND=numpy`` forces the numpy lane,
* ``HESSIAN_LAB_BACKEND=numba`` demands numba (ImportError if missing),
* unset/auto: numba when importable, numpy otherwise.
"""

from __future__ import annotations

import os

_ENV_VAR = "HESSIAN_LAB_BACKEND"


def _resolve() -> str:
    # skip the TBB probe; the bundled TBB predates what numba wants
    os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp workqueue tbb")
    choice = os.environ.get(_ENV_VAR, "auto").strip().lower()
    if choice in ("numpy", "python"):
        return "numpy"
    if choice == "numba":
        import numba  # noqa: F401  -- fail loudly if demanded but absent

        return "numba"
    if choice not in ("auto", ""):
        raise ValueError(
            f"{_ENV_VAR} must be 'numpy', 'numba' or 'auto', got {choice!r}"
        )
    try:
        import numba  # noqa: F401

        return "numba"
    except ImportError:
        return "numpy"


BACKEND = _resolve()
USE_NUMBA = BACKEND == "numba"


def set_num_threads(k: int) -> None:
    """Pin the kernel thread count (no-op on the numpy lane)."""
    if USE_NUMBA and k > 0:
        import numba

        numba.set_num_threads(min(k, numba.config.NUMBA_NUM_THREADS))
