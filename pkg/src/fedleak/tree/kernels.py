"""Kernel selection: the compiled extension when built, numpy otherwise.

Set ``FEDLEAK_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py as fallback

compiled = None
if not os.environ.get("FEDLEAK_PURE_PYTHON"):
    try:
        from . import _kernels as compiled
    except ImportError:
        compiled = None

_impl = compiled if compiled is not None else fallback
BACKEND = "cython" if compiled is not None else "python"

bucket_sums = _impl.bucket_sums
best_split = _impl.best_split
leaf_ids = _impl.leaf_ids
