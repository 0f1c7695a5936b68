"""Kernel backend selection.

The compiled Cython core is preferred when importable; otherwise the numpy
fallback is used. Set ``FEDSIM_PURE_PYTHON=1`` to force the fallback (used by
the benchmark and for debugging). Selection happens once at import.
"""

from __future__ import annotations

import os

if os.environ.get("FEDSIM_PURE_PYTHON", "0") not in ("", "0"):
    from . import _kernels_py as kernels
else:
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]
    except ImportError:
        from . import _kernels_py as kernels  # type: ignore[no-redef]


def backend_name() -> str:
    """Either ``"cython"`` (compiled core) or ``"python"`` (numpy fallback)."""
    return kernels.BACKEND_NAME
