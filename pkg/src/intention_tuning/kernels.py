"""Kernel dispatch: the compiled extension when built, else pure Python.

Set ``INTENTION_TUNING_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("INTENTION_TUNING_PURE_PYTHON"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py

variance_split = _impl.variance_split
lcs_length = _impl.lcs_length

__all__ = ["BACKEND", "lcs_length", "variance_split"]
