"""Backend selection for the likelihood kernels.

The compiled extension is used when importable; setting the environment
variable ``MISCLASSREG_PURE_PYTHON=1`` forces the NumPy fallback.
"""

import os

from . import _kernels_py

STATUS_OK = _kernels_py.STATUS_OK
STATUS_STRUCTURAL = _kernels_py.STATUS_STRUCTURAL
STATUS_OVERFLOW = _kernels_py.STATUS_OVERFLOW
ROW_X0 = _kernels_py.ROW_X0
ROW_X1 = _kernels_py.ROW_X1
ROW_MIX = _kernels_py.ROW_MIX
ROW_ZERO = _kernels_py.ROW_ZERO


def _load():
    if os.environ.get("MISCLASSREG_PURE_PYTHON", "").strip() not in ("", "0"):
        return _kernels_py, "python"
    try:
        from . import _kernels
    except ImportError:
        return _kernels_py, "python"
    return _kernels, "cython"


_impl, BACKEND = _load()

joint_terms = _impl.joint_terms
loglik_and_phi = _impl.loglik_and_phi
increment_sum = _impl.increment_sum


def available_backends():
    """Map backend name to kernel module for every importable implementation."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels

        out["cython"] = _kernels
    except ImportError:
        pass
    return out
