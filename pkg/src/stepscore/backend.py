"""Kernel backend selection.

The numba-compiled kernels are used by default; set ``STEPSCORE_BACKEND=numpy``
to force the pure-numpy path (e.g. on machines where numba is unavailable or
for benchmarking one against the other).
"""

from __future__ import annotations

import os
import warnings

from . import _kernels_numpy

_requested = os.environ.get("STEPSCORE_BACKEND", "numba").strip().lower()

if _requested not in ("numba", "numpy"):
    raise ValueError(f"STEPSCORE_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numba":
    try:
        from . import _kernels_numba as _impl

        BACKEND = "numba"
    except ImportError:  # pragma: no cover - depends on install
        warnings.warn("numba unavailable, falling back to the numpy kernels")
        _impl = _kernels_numpy
        BACKEND = "numpy"
else:
    _impl = _kernels_numpy
    BACKEND = "numpy"

dilated_conv_forward = _impl.dilated_conv_forward
dilated_conv_backward = _impl.dilated_conv_backward
linear_attention_core = _impl.linear_attention_core
linear_attention_core_backward = _impl.linear_attention_core_backward
