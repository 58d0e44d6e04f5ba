"""Selects the compiled clustering kernel when available.

Set ``TRACEORACLE_PURE=1`` to force the numpy implementation.
"""
from __future__ import annotations

import os

from . import _kernels_py

SINGLE, AVERAGE, COMPLETE = _kernels_py.SINGLE, _kernels_py.AVERAGE, _kernels_py.COMPLETE
TIE_RTOL = _kernels_py.TIE_RTOL

if os.environ.get("TRACEORACLE_PURE", "") not in ("", "0"):
    agglomerate = _kernels_py.agglomerate
    BACKEND = "python"
else:
    try:
        from ._kernels import agglomerate  # type: ignore[no-redef]
        BACKEND = "compiled"
    except ImportError:
        agglomerate = _kernels_py.agglomerate
        BACKEND = "python"

__all__ = ["AVERAGE", "BACKEND", "COMPLETE", "SINGLE", "TIE_RTOL", "agglomerate"]
