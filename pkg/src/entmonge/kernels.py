"""Backend selection for the hot Sinkhorn reductions.

The Cython extension is used when it imports; set ``ENTMONGE_PURE_PYTHON=1``
to force the NumPy fallback.
"""

import os

from . import _kernels_py

if os.environ.get("ENTMONGE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND
lse_rows = _impl.lse_rows


def default_threads() -> int:
    """Thread budget from the ``THREADS`` environment variable (default 1)."""
    try:
        return max(1, int(os.environ.get("THREADS", "1")))
    except ValueError:
        return 1
