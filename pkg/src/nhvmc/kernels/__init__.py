"""Hot numerical kernels with a compiled core and a NumPy fallback.

The compiled extension (``nhvmc.kernels._fast``, built from Cython) is used
when available; otherwise the NumPy reference (``_ref``) is selected at
import time.  Set the environment variable ``NHVMC_PURE_PYTHON=1`` to force
the reference backend.  ``benchmarks/bench_kernels.py`` compares the two.
"""

import os

from . import _ref

if os.environ.get("NHVMC_PURE_PYTHON"):
    _impl = _ref
    BACKEND = "numpy"
else:
    try:
        from . import _fast as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _ref
        BACKEND = "numpy"

log2cosh = _impl.log2cosh
rbm_theta_logpsi = _impl.rbm_theta_logpsi
rbm_flip_stats = _impl.rbm_flip_stats
metropolis_sweep = _impl.metropolis_sweep

__all__ = [
    "BACKEND",
    "log2cosh",
    "rbm_theta_logpsi",
    "rbm_flip_stats",
    "metropolis_sweep",
]
