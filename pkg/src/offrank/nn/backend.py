"""Kernel backend selection.

The compiled extension is preferred when importable; the pure-Python module is
a drop-in replacement with bit-identical results (same loop and accumulation
order).  Set ``OFFRANK_KERNELS=py`` or ``OFFRANK_KERNELS=c`` to force one.
"""
from __future__ import annotations

import os

from . import _pykernels


def _select():
    forced = os.environ.get("OFFRANK_KERNELS", "").strip().lower()
    if forced in ("py", "python"):
        return _pykernels
    if forced in ("c", "compiled"):
        from . import _ckernels  # raises if the extension was not built

        return _ckernels
    if forced:
        raise ValueError(f"OFFRANK_KERNELS must be 'py' or 'c', got {forced!r}")
    try:
        from . import _ckernels
    except ImportError:
        return _pykernels
    return _ckernels


kernels = _select()
BACKEND = kernels.NAME
