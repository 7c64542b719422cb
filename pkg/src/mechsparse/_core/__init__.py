"""Backend selection: compiled elimination kernel when available, numpy otherwise.

Set MECHSPARSE_NO_COMPILED_CORE=1 to force the pure-Python path.
"""

import os

import numpy as np

from .fallback import gj_inverse_masked as _gj_python

try:
    if os.environ.get("MECHSPARSE_NO_COMPILED_CORE"):
        raise ImportError("compiled core disabled by environment")
    from . import _gj as _compiled
except ImportError:
    _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"


def gj_inverse(C, pivot_tol):
    """Masked Gauss-Jordan inverse of an exactly-masked matrix C.

    Fast compiled path first; falls back to the Python implementation when
    the extension is unavailable or a pivot needs the permutation fix-up.
    """
    if _compiled is not None:
        A = np.array(C, dtype=np.float64, copy=True, order="C")
        B = np.eye(A.shape[0])
        stage = _compiled.gj_inverse_fast(A, B, pivot_tol)
        if stage < 0:
            return B
    return _gj_python(C, pivot_tol)
