"""Kernel dispatch: compiled Cython core if importable, numpy fallback otherwise.

Set ``SIZEUNFOLD_PURE_PYTHON=1`` before import to force the fallback.
"""
import os

from . import _fallback

BACKEND = "python"

if not os.environ.get("SIZEUNFOLD_PURE_PYTHON"):
    try:
        from . import _core
    except ImportError:
        _core = None
    else:
        BACKEND = "cython"
else:
    _core = None

_impl = _core if _core is not None else _fallback

section_areas = _impl.section_areas
pava = _impl.pava
diff_sq_rmatvec = _impl.diff_sq_rmatvec
suffix_l1_sweep = _impl.suffix_l1_sweep

__all__ = ["BACKEND", "section_areas", "pava", "diff_sq_rmatvec", "suffix_l1_sweep"]
