"""Kernel backend selection.

The hot numeric kernels exist twice: a numba-compiled loop implementation
(:mod:`ttalab._kernels_nb`) and a vectorized pure-numpy one
(:mod:`ttalab._kernels_np`). The environment variable ``TTALAB_BACKEND``
picks the path:

* ``TTALAB_BACKEND=numpy``  -- force the pure-numpy fallback
* ``TTALAB_BACKEND=numba``  -- force numba (ImportError if unavailable)
* unset                     -- numba when importable, numpy otherwise

Both paths are individually deterministic: repeated runs on identical
inputs are bitwise identical within a backend.
"""

import os


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


_requested = os.environ.get("TTALAB_BACKEND", "").strip().lower()

if _requested == "numpy":
    USE_NUMBA = False
elif _requested == "numba":
    if not _numba_available():
        raise ImportError("TTALAB_BACKEND=numba but numba is not importable")
    USE_NUMBA = True
elif _requested == "":
    USE_NUMBA = _numba_available()
else:
    raise ValueError(f"unknown TTALAB_BACKEND value: {_requested!r}")

BACKEND = "numba" if USE_NUMBA else "numpy"
