"""Backend selection for the hot kernels.

The numba kernels are used when numba imports cleanly, unless the environment
variable ``RGBD_DIFFDET_PURE_NUMPY`` is set to a truthy value.  Both backends
produce bit-identical results; the test suite checks that.
"""

from __future__ import annotations

import os

from . import _numpy_kernels

_FLAG = "RGBD_DIFFDET_PURE_NUMPY"


def _numba_requested() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() not in {"1", "true", "yes", "on"}


kernels = _numpy_kernels
BACKEND = "numpy"

if _numba_requested():
    try:
        from . import _numba_kernels
    except ImportError:  # pragma: no cover - numba missing
        pass
    else:
        kernels = _numba_kernels
        BACKEND = "numba"


def warmup() -> None:
    """Trigger JIT compilation so timed runs exclude it."""
    if BACKEND == "numba":
        _numba_kernels.warmup()
