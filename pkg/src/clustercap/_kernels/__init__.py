"""Numeric kernel selection: compiled extension when available, pure otherwise.

Set ``CLUSTERCAP_PURE_PYTHON=1`` to force the pure backend (used by the
benchmark script and for debugging).  Both backends produce bit-identical
results; only speed differs.
"""

import os

if os.environ.get("CLUSTERCAP_PURE_PYTHON"):
    from clustercap._kernels._pure import pstdev, water_fill

    BACKEND = "pure"
else:
    try:
        from clustercap._kernels._fast import pstdev, water_fill  # type: ignore

        BACKEND = "fast"
    except ImportError:
        from clustercap._kernels._pure import pstdev, water_fill

        BACKEND = "pure"

__all__ = ["BACKEND", "pstdev", "water_fill"]
