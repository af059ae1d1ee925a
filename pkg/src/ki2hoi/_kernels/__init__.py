"""Hot loops: bipartite assignment and per-class detection matching.

The compiled ``_core`` extension is used when it was built; otherwise the
pure-Python ``_fallback`` module provides identical results.  Setting
``KI2HOI_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _fallback

BACKEND = "python"
if os.environ.get("KI2HOI_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _core as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
else:
    _impl = _fallback

solve_assignment = _impl.solve_assignment
greedy_pair_match = _impl.greedy_pair_match

__all__ = ["BACKEND", "solve_assignment", "greedy_pair_match"]
