"""Kernel backend selection.

The compiled Cython extension is preferred when it imported cleanly;
otherwise the pure-Python fallback takes over.  Setting TERMNORM_PURE=1
in the environment forces the fallback regardless.
"""
from __future__ import annotations

import os

from . import pure as _pure

if os.environ.get("TERMNORM_PURE") == "1":
    _impl = _pure
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _pure

BACKEND: str = _impl.BACKEND_NAME

count_intersections = _impl.count_intersections
longest_matches = _impl.longest_matches
levenshtein = _impl.levenshtein


def available_backends() -> dict[str, object]:
    """Importable backends by name; used by the benchmark and equivalence tests."""
    backends: dict[str, object] = {"pure": _pure}
    try:
        from . import _ckernels

        backends["cython"] = _ckernels
    except ImportError:
        pass
    return backends
