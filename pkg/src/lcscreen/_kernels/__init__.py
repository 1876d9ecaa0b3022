"""Kernel backend selection.

The compiled extension (``_core``) is preferred when it has been built;
otherwise the NumPy fallback is used.  Set ``LCSCREEN_PURE_PYTHON=1`` to
force the fallback (useful for benchmarking and debugging).
"""

import os

from . import _fallback

if os.environ.get("LCSCREEN_PURE_PYTHON") == "1":
    _impl = _fallback
    BACKEND = "fallback"
else:
    try:
        from . import _core as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = _fallback
        BACKEND = "fallback"

cs_logpdf_many = _impl.cs_logpdf_many
cell_masses = _impl.cell_masses

__all__ = ["BACKEND", "cs_logpdf_many", "cell_masses"]
