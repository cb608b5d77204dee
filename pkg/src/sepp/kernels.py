"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation is. Set ``SEPP_PURE_PYTHON=1`` to force the fallback.
"""

import os

if os.environ.get("SEPP_PURE_PYTHON", "") not in ("", "0"):
    from . import _pykernels as _impl

    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        from . import _pykernels as _impl

        BACKEND = "python"

find_pairs = _impl.find_pairs
trigger_pairs = _impl.trigger_pairs
point_sums = _impl.point_sums
pair_responsibilities = _impl.pair_responsibilities

__all__ = ["BACKEND", "find_pairs", "trigger_pairs", "point_sums", "pair_responsibilities"]
