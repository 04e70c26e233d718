import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from twoview.linalg import CCA_RIDGE, DegenerateError, correlation_stats, orthogonalize_pair, svd_cca, whiten


def test_whiten_population_convention(rng):
    Z = rng.standard_normal((50, 4)) * [1, 2, 3, 4] + 7
    W, stats = whiten(Z)
    np.testing.assert_allclose(W.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose((W**2).mean(axis=0), 1, rtol=1e-12)
    np.testing.assert_allclose(stats.std, Z.std(axis=0), rtol=1e-12)


def test_whiten_constant_column_is_zeroed(rng):
    Z = rng.standard_normal((10, 3))
    Z[:, 1] = 4.2
    W, stats = whiten(Z)
    assert stats.degenerate.tolist() == [False, True, False]
    np.testing.assert_array_equal(W[:, 1], 0.0)


def test_whiten_needs_two_rows():
    with pytest.raises(ValueError):
        whiten(np.ones((1, 3)))


def test_correlation_stats_shapes(rng):
    Z1, Z2, H1 = (whiten(rng.standard_normal((20, k)))[0] for k in (3, 3, 2))
    cs = correlation_stats(Z1, Z2, H1=H1)
    assert cs.C.shape == (3, 3) and cs.delta1.shape == (3, 2) and cs.delta2 is None
    np.testing.assert_allclose(np.diag(cs.sigma1), 1.0)


@settings(max_examples=60, deadline=None)
@given(k=st.integers(2, 8), seed=st.integers(0, 2**31))
def test_projector_is_symmetric_idempotent_and_kills_span(k, seed):
    rng = np.random.default_rng(seed)
    z1, z2 = rng.standard_normal(k), rng.standard_normal(k)
    P = orthogonalize_pair(z1, z2).projector
    np.testing.assert_allclose(P, P.T, atol=1e-12)
    np.testing.assert_allclose(P @ P, P, atol=1e-12)
    np.testing.assert_allclose(P @ z1, 0, atol=1e-12)
    np.testing.assert_allclose(P @ z2, 0, atol=1e-12)
    assert np.trace(P) == pytest.approx(k - 2)


def test_parallel_pair_drops_second_vector(rng):
    z = rng.standard_normal(5)
    pair = orthogonalize_pair(z, -3 * z)
    assert pair.z2 is None
    assert np.trace(pair.projector) == pytest.approx(4)


def test_zero_first_vector_is_degenerate():
    with pytest.raises(DegenerateError):
        orthogonalize_pair(np.zeros(3), np.ones(3))


def test_cca_matches_generalized_eigenproblem(rng):
    n = 3000
    S = rng.standard_normal((n, 2))
    X1 = np.c_[S, rng.standard_normal((n, 3))] @ rng.standard_normal((5, 5))
    X2 = np.c_[0.7 * S + 0.5 * rng.standard_normal((n, 2)), rng.standard_normal((n, 2))] @ rng.standard_normal((4, 4))
    corrs, U, V = svd_cca(X1, X2, 3)
    # independent oracle: S12 S22^-1 S21 u = rho^2 S11 u
    A, B = X1 - X1.mean(0), X2 - X2.mean(0)
    S11, S22, S12 = A.T @ A / n, B.T @ B / n, A.T @ B / n
    S11 += CCA_RIDGE * np.eye(5)
    S22 += CCA_RIDGE * np.eye(4)
    rho2 = scipy.linalg.eigh(S12 @ np.linalg.solve(S22, S12.T), S11, eigvals_only=True)[::-1]
    np.testing.assert_allclose(corrs, np.sqrt(np.clip(rho2[:3], 0, None)), atol=1e-9)
    # the directions realise the correlations
    P, Q = whiten(A @ U)[0], whiten(B @ V)[0]
    np.testing.assert_allclose((P * Q).mean(0), corrs, atol=1e-4)
    np.testing.assert_allclose(P.T @ P / n, np.eye(3), atol=1e-4)


def test_cca_rejects_rank_deficient(rng):
    X1 = rng.standard_normal((100, 3))
    X1[:, 2] = X1[:, 0] + X1[:, 1]
    with pytest.raises(DegenerateError):
        svd_cca(X1, rng.standard_normal((100, 3)), 2)
    with pytest.raises(ValueError):
        svd_cca(rng.standard_normal((100, 3)), rng.standard_normal((100, 3)), 4)
