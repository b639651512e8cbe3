"""Kernel backend selection.

Set ``EXCITNET_NUMBA=0`` in the environment to force the pure-numpy kernels.
The flag is read once at import time.
"""

import os

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("EXCITNET_NUMBA", "1").strip().lower() not in (
    "0",
    "false",
    "no",
    "off",
)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
