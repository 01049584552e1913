"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback is. Set ``COARSEGRAIN_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

_FORCE_PY = os.environ.get("COARSEGRAIN_PURE_PYTHON", "").strip() not in ("", "0")

_compiled = None
if not _FORCE_PY:
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

_impl = _compiled if _compiled is not None else _kernels_py

BACKEND = _impl.BACKEND
em_double_well = _impl.em_double_well
nw_fields = _impl.nw_fields


def available_backends():
    out = {"python": _kernels_py}
    if _compiled is not None:
        out["cython"] = _compiled
    return out
