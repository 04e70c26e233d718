"""Whitening, correlation statistics, Gram-Schmidt projectors and SVD-based CCA."""
from dataclasses import dataclass

import numpy as np

from twoview import kernels

EPS_WHITE = 1e-8
EPS_NORM = 1e-8
PARALLEL_TOL = 1e-6
CCA_RIDGE = 1e-6


class DegenerateError(ValueError):
    pass


@dataclass(frozen=True)
class WhitenStats:
    mean: np.ndarray
    std: np.ndarray
    degenerate: np.ndarray  # bool per column


@dataclass(frozen=True)
class CorrelationStats:
    C: np.ndarray
    sigma1: np.ndarray
    sigma2: np.ndarray
    delta1: np.ndarray | None = None
    delta2: np.ndarray | None = None


@dataclass(frozen=True)
class OrthogonalizedPair:
    z1: np.ndarray
    z2: np.ndarray | None
    projector: np.ndarray


def whiten(Z):
    """Column-whiten ``Z`` (mean 0, population variance 1).

    Columns whose standard deviation falls below ``EPS_WHITE`` are mapped to
    zeros and flagged in the returned stats.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2:
        raise ValueError("whiten expects an n x k matrix")
    if Z.shape[0] < 2:
        raise ValueError("whiten needs at least 2 rows")
    mean, var = kernels.col_moments(Z)
    std = np.sqrt(var)
    degenerate = std < EPS_WHITE
    scale = np.where(degenerate, 0.0, 1.0 / np.where(degenerate, 1.0, std))
    return (Z - mean) * scale, WhitenStats(mean, std, degenerate)


def correlation_stats(Z1, Z2, H1=None, H2=None):
    """Cross- and within-view correlation matrices of whitened inputs."""
    Z1 = np.asarray(Z1, dtype=np.float64)
    Z2 = np.asarray(Z2, dtype=np.float64)
    n = Z1.shape[0]
    for M in (Z2, H1, H2):
        if M is not None and np.shape(M)[0] != n:
            raise ValueError("correlation_stats: row counts differ")
    delta1 = None if H1 is None else Z1.T @ np.asarray(H1, dtype=np.float64) / n
    delta2 = None if H2 is None else Z2.T @ np.asarray(H2, dtype=np.float64) / n
    return CorrelationStats(Z1.T @ Z2 / n, Z1.T @ Z1 / n, Z2.T @ Z2 / n, delta1, delta2)


def orthogonalize_pair(z1, z2):
    """Gram-Schmidt on (z1, z2) in that order and the complementary projector.

    ``z2`` is dropped when its residual against ``z1`` is numerically zero, in
    which case the projector has rank k-1.
    """
    z1 = np.asarray(z1, dtype=np.float64).ravel()
    z2 = np.asarray(z2, dtype=np.float64).ravel()
    if z1.shape != z2.shape:
        raise ValueError("orthogonalize_pair: vectors differ in length")
    n1 = np.linalg.norm(z1)
    if n1 < EPS_NORM:
        raise DegenerateError("first vector has (near) zero norm")
    e1 = z1 / n1
    resid = z2 - (e1 @ z2) * e1
    nr = np.linalg.norm(resid)
    e2 = None
    if nr >= PARALLEL_TOL * np.linalg.norm(z2) and nr > 0.0:
        e2 = resid / nr
        # one re-orthogonalization pass keeps e1.e2 at rounding level
        e2 = e2 - (e1 @ e2) * e1
        e2 /= np.linalg.norm(e2)
    P = np.eye(z1.size) - np.outer(e1, e1)
    if e2 is not None:
        P -= np.outer(e2, e2)
    return OrthogonalizedPair(e1, e2, P)


def _inv_sqrt(S):
    w, V = np.linalg.eigh(S)
    return (V / np.sqrt(w)) @ V.T


def svd_cca(X1, X2, k):
    """Classical CCA: top-k canonical correlations and directions.

    Covariances use the population convention and a ``CCA_RIDGE * I`` ridge.
    Returns ``(corrs, U, V)`` with ``U`` (d1 x k) and ``V`` (d2 x k).
    """
    X1 = np.asarray(X1, dtype=np.float64)
    X2 = np.asarray(X2, dtype=np.float64)
    n, d1 = X1.shape
    if X2.shape[0] != n:
        raise ValueError("svd_cca: row counts differ")
    d2 = X2.shape[1]
    if n <= max(d1, d2):
        raise ValueError("svd_cca needs more samples than features")
    if not 1 <= k <= min(d1, d2):
        raise ValueError(f"k={k} out of range for dims ({d1}, {d2})")
    A = X1 - X1.mean(axis=0)
    B = X2 - X2.mean(axis=0)
    S11 = A.T @ A / n
    S22 = B.T @ B / n
    for S in (S11, S22):
        w = np.linalg.eigvalsh(S)
        if w[-1] <= 0 or w[0] < -CCA_RIDGE or w[0] / w[-1] < 1e-14:
            raise DegenerateError("covariance is rank deficient beyond the ridge")
    R1 = _inv_sqrt(S11 + CCA_RIDGE * np.eye(d1))
    R2 = _inv_sqrt(S22 + CCA_RIDGE * np.eye(d2))
    T = R1 @ (A.T @ B / n) @ R2
    u, s, vt = np.linalg.svd(T)
    corrs = np.clip(s[:k], 0.0, 1.0)
    return corrs, R1 @ u[:, :k], R2 @ vt[:k].T
