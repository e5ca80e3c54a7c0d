"""Hot loops with a compiled backend and a numpy fallback.

The Cython extension ``_ckernels`` is used when it was built; otherwise, or
when ``DIRICHLET_LAB_PURE=1`` is set, the numpy implementations are used.
Both backends share one contract and are cross-checked by the test suite.
"""

import os

from . import _numpy_kernels as numpy_backend

compiled_backend = None
if os.environ.get("DIRICHLET_LAB_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

_active = compiled_backend if compiled_backend is not None else numpy_backend
BACKEND = "cython" if compiled_backend is not None else "numpy"

ucp_terminal = _active.ucp_terminal
ceps_terminal = _active.ceps_terminal
ucp_path = _active.ucp_path
causal_convolution = _active.causal_convolution

__all__ = [
    "BACKEND",
    "ucp_terminal",
    "ceps_terminal",
    "ucp_path",
    "causal_convolution",
    "numpy_backend",
    "compiled_backend",
]
