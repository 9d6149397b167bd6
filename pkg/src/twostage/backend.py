"""Selects the scan kernel implementation at import time.

The compiled Cython extension is used when it was built; otherwise the
NumPy fallback.  ``TWOSTAGE_BACKEND=python`` forces the fallback and
``TWOSTAGE_BACKEND=compiled`` makes a missing extension an error.
"""

import os

from . import _fallback

_requested = os.environ.get("TWOSTAGE_BACKEND", "").strip().lower()

try:
    from . import _kernels
except ImportError:  # extension not built
    _kernels = None
    if _requested == "compiled":
        raise

if _kernels is not None and _requested != "python":
    BACKEND = "compiled"
    scan_items = _kernels.scan_items
else:
    BACKEND = "python"
    scan_items = _fallback.scan_items


def available():
    """Names of the kernel implementations importable in this environment."""
    return ["compiled", "python"] if _kernels is not None else ["python"]


def get(name):
    if name == "compiled":
        if _kernels is None:
            raise ImportError("the compiled kernel extension is not built")
        return _kernels.scan_items
    if name == "python":
        return _fallback.scan_items
    raise ValueError(f"unknown backend {name!r}")
