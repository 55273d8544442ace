"""Backend selection for the hot kernels.

The compiled extension is used when it was built; otherwise the numpy
implementation is used. Set ``CI_STONET_PURE_PYTHON=1`` to force the
fallback.
"""

import os

from . import _kernels_py

if os.environ.get("CI_STONET_PURE_PYTHON", "") not in ("", "0"):
    _backend = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _backend  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _backend = _kernels_py
        BACKEND = "python"

mixture_logpdf_grad = _backend.mixture_logpdf_grad
slab_mask = _backend.slab_mask
sghmc_update = _backend.sghmc_update
tanh_backward = _backend.tanh_backward

__all__ = [
    "BACKEND",
    "mixture_logpdf_grad",
    "slab_mask",
    "sghmc_update",
    "tanh_backward",
]
