"""Kernel dispatch: compiled extension when built, NumPy fallback otherwise.

Set ``MAGLOC_PURE_PYTHON=1`` to force the fallback (useful for comparing
both paths, see ``benchmarks/bench_kernels.py``).
"""

from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"

if os.environ.get("MAGLOC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels
    else:
        BACKEND = "cython"
else:
    _impl = _pykernels

dipole_fields = _impl.dipole_fields
lasso_cd = _impl.lasso_cd
MU0_OVER_4PI = _pykernels.MU0_OVER_4PI

__all__ = ["BACKEND", "MU0_OVER_4PI", "dipole_fields", "lasso_cd"]
