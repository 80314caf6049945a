"""Hot kernels with a compiled core and a pure-numpy fallback.

The compiled extension is used when it was built and imports cleanly.
Set ``CP3ER_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("CP3ER_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass

im2col = _impl.im2col
col2im = _impl.col2im
random_shift = _impl.random_shift
nstep_returns = _impl.nstep_returns
ppe_weights = _impl.ppe_weights

__all__ = ["BACKEND", "im2col", "col2im", "random_shift", "nstep_returns", "ppe_weights"]
