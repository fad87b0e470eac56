"""Hot kernels with a compiled backend when available.

The Cython extension is used if it imports; otherwise (or with the
environment variable ``GRIDKIT_PURE_PYTHON=1``) the pure-Python versions in
``_kernels_py`` are used.  ``BACKEND`` names the active one.
"""
import os

from . import _kernels_py

if os.environ.get("GRIDKIT_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"

box_sum_solve = _impl.box_sum_solve
uc_dp = _impl.uc_dp

__all__ = ["BACKEND", "box_sum_solve", "uc_dp"]
