"""Hot fused kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time from the ``SURE_ERC_BACKEND``
environment variable (``numba`` or ``numpy``). When unset, numba is used if it
imports cleanly. Both backends are importable side by side as ``numpy_impl``
and ``numba_impl`` (the latter is ``None`` without numba) so tests and the
benchmark can compare them directly.
"""
import logging
import os

from . import _numpy as numpy_impl

logger = logging.getLogger(__name__)

try:
    from . import _numba as numba_impl
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_impl = None

_requested = os.environ.get("SURE_ERC_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ImportError(f"SURE_ERC_BACKEND must be 'numba' or 'numpy', got {_requested!r}")
if _requested == "numpy" or numba_impl is None:
    if _requested == "numba":
        logger.warning("numba requested but unavailable; using numpy kernels")
    _impl = numpy_impl
    BACKEND = "numpy"
else:
    _impl = numba_impl
    BACKEND = "numba"

softmax_fwd = _impl.softmax_fwd
softmax_bwd = _impl.softmax_bwd
layer_norm_fwd = _impl.layer_norm_fwd
layer_norm_bwd = _impl.layer_norm_bwd
lstm_cell_fwd = _impl.lstm_cell_fwd
lstm_cell_bwd = _impl.lstm_cell_bwd
adamw_step = _impl.adamw_step
confusion_matrix = _impl.confusion_matrix

__all__ = [
    "BACKEND",
    "numpy_impl",
    "numba_impl",
    "softmax_fwd",
    "softmax_bwd",
    "layer_norm_fwd",
    "layer_norm_bwd",
    "lstm_cell_fwd",
    "lstm_cell_bwd",
    "adamw_step",
    "confusion_matrix",
]
