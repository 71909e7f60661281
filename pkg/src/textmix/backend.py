"""Kernel backend selection.

The hot inner loops (matrix products, softmax, layer norm, GELU,
soft-target cross entropy, the optimizer update) exist twice: a compiled
Cython core (textmix._ckernels) and a pure-NumPy reference
(textmix._kernels_py). The compiled core is picked at import time when
present; set TEXTMIX_BACKEND=python or TEXTMIX_BACKEND=cython to force a
choice. Both backends satisfy the same determinism contracts; their
floating-point results may differ in the last ulp, so a process should
never mix backends within one run.
"""

import os

from . import _kernels_py

_FORCE = os.environ.get("TEXTMIX_BACKEND", "").strip().lower()

if _FORCE == "python":
    kernels = _kernels_py
    BACKEND = "python"
elif _FORCE == "cython":
    from . import _ckernels as kernels  # noqa: F401  (ImportError is the diagnostic)

    BACKEND = "cython"
elif _FORCE == "":
    try:
        from . import _ckernels as kernels
        BACKEND = "cython"
    except ImportError:
        kernels = _kernels_py
        BACKEND = "python"
else:
    raise ValueError(
        f"TEXTMIX_BACKEND={_FORCE!r} not recognized; use 'cython' or 'python'"
    )


def backend_name() -> str:
    """Name of the active kernel backend ('cython' or 'python')."""
    return BACKEND
