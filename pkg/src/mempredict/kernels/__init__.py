"""Inner loops used by the tree and linear-SVM learners.

The compiled ``_core`` extension is used when it was built; otherwise, or when
``MEMPREDICT_PURE_PYTHON=1`` is set, the NumPy fallback is selected.
"""

import os

from . import _fallback

try:
    from . import _core
except ImportError:
    _core = None

if _core is not None and os.environ.get("MEMPREDICT_PURE_PYTHON") != "1":
    BACKEND = "cython"
    _impl = _core
else:
    BACKEND = "python"
    _impl = _fallback

best_split = _impl.best_split
pegasos_linear = _impl.pegasos_linear
csr_rows_dot = _impl.csr_rows_dot


def available_backends():
    backends = {"python": _fallback}
    if _core is not None:
        backends["cython"] = _core
    return backends
