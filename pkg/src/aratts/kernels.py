"""Hot-loop kernels, compiled when the Cython extension is built.

Set ``ARATTS_PURE_PYTHON=1`` to force the numpy fallback. ``BACKEND`` names
the implementation in use.
"""
import os

import numpy as np

from aratts import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if not os.environ.get("ARATTS_PURE_PYTHON"):
    try:
        from aratts import _native as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py


def lstm_pointwise_forward(gates, c_prev):
    return _impl.lstm_pointwise_forward(np.ascontiguousarray(gates), np.ascontiguousarray(c_prev))


def lstm_pointwise_backward(dhc, acts, c_prev):
    return _impl.lstm_pointwise_backward(
        np.ascontiguousarray(dhc), np.ascontiguousarray(acts), np.ascontiguousarray(c_prev)
    )


def fir_gather(xpad, table, base, phase):
    return _impl.fir_gather(
        np.ascontiguousarray(xpad, dtype=np.float64),
        np.ascontiguousarray(table, dtype=np.float64),
        np.ascontiguousarray(base, dtype=np.intp),
        np.ascontiguousarray(phase, dtype=np.intp),
    )


def frame_rms(x, frame, hop):
    return _impl.frame_rms(np.ascontiguousarray(x, dtype=np.float64), int(frame), int(hop))
