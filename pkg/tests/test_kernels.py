import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusecore import kernels
from fusecore.kernels import backends

IMPLS = backends()
needs_compiled = pytest.mark.skipif("cython" not in IMPLS, reason="compiled kernels not built")


def _mask(rng, rows, cols):
    m = (rng.random((rows, cols)) < 0.6).astype(np.uint8)
    m[:, rng.integers(cols)] = 1
    return m


@needs_compiled
@pytest.mark.parametrize("seed", range(5))
def test_backends_agree_on_softmax(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(12, 7)) * 5
    mask = _mask(rng, 4, 7)
    py, cy = IMPLS["python"], IMPLS["cython"]
    for m in (None, mask):
        np.testing.assert_allclose(cy.softmax_rows_fwd(x, m), py.softmax_rows_fwd(x, m), atol=1e-14)
    y = py.softmax_rows_fwd(x, mask)
    g = rng.normal(size=x.shape)
    np.testing.assert_allclose(cy.softmax_rows_bwd(y, g), py.softmax_rows_bwd(y, g), atol=1e-14)


@needs_compiled
@pytest.mark.parametrize("seed", range(5))
def test_backends_agree_on_layer_norm(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(6, 9))
    gain, bias = rng.normal(size=9), rng.normal(size=9)
    py, cy = IMPLS["python"], IMPLS["cython"]
    for a, b in zip(cy.layer_norm_fwd(x, gain, bias, 1e-5), py.layer_norm_fwd(x, gain, bias, 1e-5)):
        np.testing.assert_allclose(a, b, atol=1e-13)
    _, xhat, rstd = py.layer_norm_fwd(x, gain, bias, 1e-5)
    g = rng.normal(size=x.shape)
    for a, b in zip(cy.layer_norm_bwd(g, xhat, rstd, gain), py.layer_norm_bwd(g, xhat, rstd, gain)):
        np.testing.assert_allclose(a, b, atol=1e-13)


def _lcs_oracle(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            table[i][j] = table[i - 1][j - 1] + 1 if a[i - 1] == b[j - 1] else max(table[i - 1][j], table[i][j - 1])
    return table[-1][-1]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 4), max_size=12), st.lists(st.integers(0, 4), max_size=12))
def test_lcs_matches_table_oracle(a, b):
    for impl in IMPLS.values():
        assert impl.lcs_length(np.array(a, dtype=np.int64), np.array(b, dtype=np.int64)) == _lcs_oracle(a, b)


def test_fully_masked_row_is_zero():
    mask = np.array([[0, 0, 0], [1, 0, 1]], dtype=np.uint8)
    for impl in IMPLS.values():
        y = impl.softmax_rows_fwd(np.ones((2, 3)), mask)
        assert np.all(y[0] == 0.0)
        np.testing.assert_allclose(y[1], [0.5, 0.0, 0.5])


def test_env_var_forces_numpy_backend():
    env = dict(os.environ, FUSECORE_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import fusecore.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_active_backend_is_registered():
    assert kernels.BACKEND in IMPLS
