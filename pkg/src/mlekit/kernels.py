"""Kernel dispatch: compiled extension when available, numpy otherwise.

Set ``MLEKIT_PURE_PYTHON=1`` before import to force the numpy path.
"""

import os

from . import _fallback

try:
    if os.environ.get("MLEKIT_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python path requested")
    from . import _kernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _fallback
    BACKEND = "numpy"

nnls_gram = _impl.nnls_gram
local_contrast = _impl.local_contrast
ciede2000 = _impl.ciede2000

fallback = _fallback
