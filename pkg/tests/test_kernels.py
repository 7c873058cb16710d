import os
import subprocess
import sys

import numpy as np
import pytest

from radlab import _closure_py, kernels
from radlab.closure import QUAD_NODES


def rule(n):
    return np.polynomial.legendre.leggauss(n)


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled extension not built")
@pytest.mark.parametrize("N", [2, 3, 6, 8])
@pytest.mark.parametrize("nodes", [32, QUAD_NODES])
def test_backends_agree(N, nodes):
    from radlab import _closure_core

    a = np.linspace(-0.95, 0.95, 23)
    x, w = rule(nodes)
    py = _closure_py.closure_batch(a, N, x, w)
    cy = _closure_core.closure_batch(a, N, x, w)
    assert set(py) == set(cy)
    for k in py:
        ref = np.asarray(py[k])
        scale = max(np.abs(ref).max(), 1.0)
        assert np.abs(np.asarray(cy[k]) - ref).max() <= 1e-12 * scale, k


def test_pure_python_switch():
    env = dict(os.environ, RADLAB_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import radlab; print(radlab.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_default_backend_reported():
    assert kernels.BACKEND in ("cython", "python")
    assert kernels.closure_batch is not None
