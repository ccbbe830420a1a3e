"""Backend selection for the GRU sequence kernels.

The compiled extension is used when it was built; otherwise the numpy
implementation is loaded. Setting ``SUBJADAPT_BACKEND=numpy`` forces the
fallback even when the extension is present.
"""

import os

BACKEND = "numpy"
if os.environ.get("SUBJADAPT_BACKEND", "").lower() != "numpy":
    try:
        from . import _gru_ext as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = None
else:
    _impl = None

if _impl is None:
    from . import _gru_ref as _impl

gru_forward = _impl.gru_forward
gru_backward = _impl.gru_backward
