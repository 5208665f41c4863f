"""Backend selection for the hot numeric kernels.

Numba-jitted kernels are used when numba imports cleanly. Set
``WAVEMORPH_NO_NUMBA=1`` to force the pure-numpy fallback path (the
fallback is also taken automatically when numba is unavailable).
"""

import os

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    _HAVE_NUMBA = False

_ENV_FLAG = "WAVEMORPH_NO_NUMBA"


def have_numba() -> bool:
    return _HAVE_NUMBA


def numba_enabled() -> bool:
    """True when the jitted kernel path should be used."""
    if os.environ.get(_ENV_FLAG, "").strip().lower() in {"1", "true", "yes"}:
        return False
    return _HAVE_NUMBA


def set_num_threads(n: int) -> None:
    """Cap the numba worker pool; a no-op on the numpy path."""
    if _HAVE_NUMBA:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
