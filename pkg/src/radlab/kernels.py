"""Kernel selection: compiled extension when importable, numpy otherwise."""

import os

from . import _closure_py

BACKEND = "python"
closure_batch = _closure_py.closure_batch

if os.environ.get("RADLAB_PURE_PYTHON", "0") != "1":
    try:
        from . import _closure_core
    except ImportError:
        pass
    else:
        closure_batch = _closure_core.closure_batch
        BACKEND = "cython"
