"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when
``FEWPHOTON_PURE_PYTHON=1`` is set, the numpy fallback is used.
"""

import os

from . import _pykernels

BACKENDS = {"python": _pykernels}
try:
    from . import _ckernels  # type: ignore[attr-defined]
except ImportError:  # extension not built
    _ckernels = None
else:
    BACKENDS["cython"] = _ckernels

if os.environ.get("FEWPHOTON_PURE_PYTHON", "") not in ("", "0") or _ckernels is None:
    BACKEND = "python"
else:
    BACKEND = "cython"

_impl = BACKENDS[BACKEND]
term_values = _impl.term_values
resolvent_sum = _impl.resolvent_sum
min_real_gap = _impl.min_real_gap
