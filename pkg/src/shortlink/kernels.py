"""Kernel dispatch: the compiled extension when it was built, numpy otherwise.

Set ``SHORTLINK_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("SHORTLINK_PURE_PYTHON"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py

bg_denoise = _impl.bg_denoise
propagate_log = _impl.propagate_log
forward_backward = _impl.forward_backward
gmp_beliefs = _impl.gmp_beliefs
bin_pushforward = _impl.bin_pushforward
amp_solve = _impl.amp_solve

__all__ = ["BACKEND", "bg_denoise", "propagate_log", "forward_backward", "gmp_beliefs",
           "bin_pushforward", "amp_solve"]
