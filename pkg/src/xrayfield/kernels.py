"""Kernel backend selection.

The compiled Cython core is used when it was built; otherwise (or when
``XRAYFIELD_PURE_PYTHON=1``) the numpy fallback is used.  ``BACKEND`` names
the active implementation.
"""
from __future__ import annotations

import os

from . import _pykernels

python_backend = _pykernels
cython_backend = None
try:
    from . import _ckernels as cython_backend  # type: ignore[no-redef]
except ImportError:  # extension not built
    cython_backend = None

if cython_backend is not None and os.environ.get("XRAYFIELD_PURE_PYTHON", "") in ("", "0"):
    _impl = cython_backend
    BACKEND = "cython"
else:
    _impl = _pykernels
    BACKEND = "python"

sample_trilinear = _impl.sample_trilinear
line_integrals = _impl.line_integrals
carve_hull = _impl.carve_hull
flood_fill = _impl.flood_fill
midpoint_samples = _pykernels.midpoint_samples
