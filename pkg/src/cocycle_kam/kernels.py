"""Selects the compiled orbit kernels when available, else the numpy fallback.

Set COCYCLE_KAM_PURE=1 to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("COCYCLE_KAM_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py

schrodinger_step = _impl.schrodinger_step
matrix_step = _impl.matrix_step
schrodinger_growth = _impl.schrodinger_growth
matrix_growth = _impl.matrix_growth
