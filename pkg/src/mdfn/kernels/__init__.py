"""Hot kernels for the Newton solve.

Set ``MDFN_DISABLE_NUMBA=1`` to force the pure NumPy/SciPy path. The numba
path is used otherwise, when numba imports.
"""
from __future__ import annotations

import os

from . import _numpy

BACKEND = "numpy"
assemble = _numpy.assemble
solve_banded = _numpy.solve_banded

if os.environ.get("MDFN_DISABLE_NUMBA", "").strip().lower() not in ("1", "true", "yes"):
    try:
        from . import _numba
    except ImportError:  # pragma: no cover - numba missing
        _numba = None
    if _numba is not None:
        BACKEND = "numba"
        assemble = _numba.assemble
        solve_banded = _numba.solve_banded

KL = _numpy.KL
KU = _numpy.KU

__all__ = ["BACKEND", "assemble", "solve_banded", "KL", "KU"]
