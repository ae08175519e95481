"""Kernel backend selection.

The compiled extension is used when importable; the numpy fallback otherwise.
Setting BICL_PURE=1 in the environment forces the fallback (useful for
benchmarking and for debugging the extension).
"""

from __future__ import annotations

import os

if os.environ.get("BICL_PURE", "") not in ("", "0"):
    from . import _pykernels as kernels

    BACKEND = "pure"
else:
    try:
        from . import _ckernels as kernels  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        from . import _pykernels as kernels  # type: ignore[no-redef]

        BACKEND = "pure"
