import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from twoview import kernels

py = kernels.load_backend("python")
try:
    cy = kernels.load_backend("cython")
except ImportError:  # extension not built
    cy = None

needs_ext = pytest.mark.skipif(cy is None, reason="compiled kernels not built")
finite = st.floats(-1e6, 1e6, allow_nan=False, width=64)


def test_backend_is_reported():
    assert kernels.BACKEND in kernels.BACKENDS


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        kernels.load_backend("fortran")


@pytest.mark.parametrize("impl", [py, cy] if cy else [py], ids=lambda m: m.__name__)
def test_relu_and_mask_values(impl):
    x = np.array([[-1.0, 0.0, 2.5], [3.0, -0.0, -4.0]])
    np.testing.assert_array_equal(impl.relu(x), [[0, 0, 2.5], [3, 0, 0]])
    g = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(impl.relu_mask(g, x), [[0, 0, 2], [3, 0, 0]])


@needs_ext
@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 30), st.integers(1, 10)), elements=finite))
def test_backends_agree_on_relu(x):
    np.testing.assert_array_equal(cy.relu(x), py.relu(x))
    np.testing.assert_array_equal(cy.relu_mask(x[::-1], x), py.relu_mask(x[::-1], x))


@needs_ext
@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 40), st.integers(1, 8)), elements=finite))
def test_backends_agree_on_column_moments(x):
    m1, v1 = cy.col_moments(x)
    m2, v2 = py.col_moments(x)
    np.testing.assert_allclose(m1, m2, rtol=1e-12, atol=1e-9)
    np.testing.assert_allclose(v1, v2, rtol=1e-10, atol=1e-6)


@pytest.mark.parametrize("impl", [py, cy] if cy else [py], ids=lambda m: m.__name__)
def test_column_moments_match_numpy(impl, rng):
    x = rng.standard_normal((100, 7)) * 3 + 5
    m, v = impl.col_moments(x)
    np.testing.assert_allclose(m, x.mean(axis=0), rtol=1e-13)
    np.testing.assert_allclose(v, x.var(axis=0), rtol=1e-12)


@needs_ext
@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), t=st.integers(1, 50))
def test_backends_agree_on_adam(seed, t):
    rng = np.random.default_rng(seed)
    p, g = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    m0, v0 = rng.standard_normal((4, 3)), rng.random((4, 3))
    bc1, bc2 = 1 - 0.9**t, 1 - 0.999**t
    ma, va, mb, vb = m0.copy(), v0.copy(), m0.copy(), v0.copy()
    pa = cy.adam_update(p, g, ma, va, 1e-3, 0.9, 0.999, 1e-8, bc1, bc2)
    pb = py.adam_update(p, g, mb, vb, 1e-3, 0.9, 0.999, 1e-8, bc1, bc2)
    np.testing.assert_allclose(pa, pb, rtol=1e-15, atol=1e-15)
    np.testing.assert_allclose(ma, mb, rtol=1e-15)
    np.testing.assert_allclose(va, vb, rtol=1e-15)
