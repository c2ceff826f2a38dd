"""Backend selection for the hot kernels.

The compiled Cython module is preferred; setting ``YOEO_PURE_PYTHON=1`` or a
missing build falls back to the numpy versions in ``_kernels_py``.
"""

import os

from . import _kernels_py

BACKEND = "python"

if not os.environ.get("YOEO_PURE_PYTHON"):
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
else:
    _impl = _kernels_py

quantile_huber = _impl.quantile_huber
logsumexp_weights = _impl.logsumexp_weights
nstep_returns = _impl.nstep_returns
knn_indices = _impl.knn_indices
cosine_basis = _impl.cosine_basis

__all__ = [
    "BACKEND",
    "quantile_huber",
    "logsumexp_weights",
    "nstep_returns",
    "knn_indices",
    "cosine_basis",
]
