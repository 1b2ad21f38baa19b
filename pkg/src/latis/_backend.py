"""Backend selection: numba-accelerated kernels vs pure-numpy fallbacks.

The environment variable LATIS_BACKEND controls which implementations the
package dispatches to:

    LATIS_BACKEND=numba   force numba (error if numba is not importable)
    LATIS_BACKEND=numpy   force the pure-numpy fallback path
    LATIS_BACKEND=auto    use numba when importable (default)

Both implementations are always importable from latis._kernels (suffixed
``_nb`` / ``_np``) so they can be compared and benchmarked directly.
"""

import os
import warnings

_flag = os.environ.get("LATIS_BACKEND", "auto").strip().lower()

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

if _flag in ("", "auto"):
    USE_NUMBA = HAVE_NUMBA
elif _flag in ("numba", "jit", "1", "on"):
    if not HAVE_NUMBA:
        warnings.warn("LATIS_BACKEND=numba requested but numba is not importable; "
                      "falling back to numpy")
    USE_NUMBA = HAVE_NUMBA
elif _flag in ("numpy", "np", "0", "off"):
    USE_NUMBA = False
else:
    raise ValueError(f"unrecognized LATIS_BACKEND value: {_flag!r}")


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
