"""Pick the compiled kernels when importable, else the NumPy fallback.

Set ``BCAST_PURE_PYTHON=1`` before import to force the fallback.
"""
import os

from . import _fallback

if os.environ.get("BCAST_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _fallback

BACKEND = "compiled" if _impl is not _fallback else "python"

simplex_iterate = _impl.simplex_iterate
simplex_pivot = _impl.simplex_pivot
dual_simplex_iterate = _impl.dual_simplex_iterate
gf_rref = _impl.gf_rref
gf_reduce = _impl.gf_reduce
phase_one = _impl.phase_one
