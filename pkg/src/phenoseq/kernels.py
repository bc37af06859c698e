"""Backend selection for the LSTM recurrence loops.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``PHENOSEQ_BACKEND=python`` to force the fallback.
"""

import os

from . import _lstm_kernels_py as python_backend

if os.environ.get("PHENOSEQ_BACKEND", "").lower() == "python":
    compiled_backend = None
else:
    try:
        from . import _lstm_kernels as compiled_backend
    except ImportError:
        compiled_backend = None

if compiled_backend is not None:
    layer_forward = compiled_backend.layer_forward
    layer_backward = compiled_backend.layer_backward
    BACKEND = "cython"
else:
    layer_forward = python_backend.layer_forward
    layer_backward = python_backend.layer_backward
    BACKEND = "python"

sigmoid = python_backend.sigmoid
