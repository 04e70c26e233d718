"""Closed-form gradient results for single-layer linear encoders.

These are written directly from the analytic expressions and share no code
with the autodiff path, so agreement between the two is a real check.
"""
from dataclasses import dataclass

import numpy as np

from twoview.linalg import EPS_NORM, DegenerateError


@dataclass(frozen=True)
class LinearMaps:
    U: np.ndarray
    V: np.ndarray
    W: np.ndarray | None = None
    S: np.ndarray | None = None

    def __post_init__(self):
        k = self.U.shape[1]
        for M in (self.V, self.W, self.S):
            if M is not None and (M.ndim != 2 or M.shape[1] != k):
                raise ValueError("all maps must have k columns")
            if M is not None and not np.isfinite(M).all():
                raise ValueError("non-finite map entries")


def _common_grad_one(A, z_self, z_other):
    n_self = np.linalg.norm(z_self)
    n_other = np.linalg.norm(z_other)
    if n_self < EPS_NORM or n_other < EPS_NORM:
        raise DegenerateError("latent norm below threshold")
    t_self = z_self / n_self
    t_other = z_other / n_other
    dot = z_self @ z_other
    cos = t_self @ t_other
    return (dot / n_self) * (t_other @ A.T - cos * (t_self @ A.T)) + cos * (z_other @ A.T)


def closed_form_common_grad(U, V, x1, x2):
    """Input gradients of the common score for ``z1 = U'x1``, ``z2 = V'x2``."""
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64).ravel()
    x2 = np.asarray(x2, dtype=np.float64).ravel()
    if U.shape[0] != x1.size or V.shape[0] != x2.size or U.shape[1] != V.shape[1]:
        raise ValueError("shape mismatch")
    z1 = x1 @ U
    z2 = x2 @ V
    return _common_grad_one(U, z1, z2), _common_grad_one(V, z2, z1)


def closed_form_individual_grad(W, P, x1):
    """``x1' W_perp W_perp'`` with ``W_perp = W P'``."""
    W = np.asarray(W, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64).ravel()
    if W.shape[0] != x1.size or P.shape != (W.shape[1], W.shape[1]):
        raise ValueError("shape mismatch")
    Wp = W @ P.T
    return x1 @ Wp @ Wp.T


def individual_score_linear(W, P, x1):
    h = np.asarray(x1, dtype=np.float64).ravel() @ W
    ph = P @ h
    return 0.5 * float(ph @ ph)


def mahalanobis_sq(x, A):
    return float(x @ A @ x)


def mahalanobis_residual(X1, w, u):
    """``| |w+u|_S^2 - |w|_S^2 - |u|_S^2 |`` with ``S = X1'X1/n``."""
    X1 = np.asarray(X1, dtype=np.float64)
    if X1.shape[0] < 2:
        raise ValueError("need n >= 2")
    S = X1.T @ X1 / X1.shape[0]
    w = np.asarray(w, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    return abs(mahalanobis_sq(w + u, S) - mahalanobis_sq(w, S) - mahalanobis_sq(u, S))


def regu_equivalence_check(U, V, x1, x2, p):
    """Both sides of ``|ds/dx1|_p = |c| |u1|_p`` for a single common direction.

    The left side is the p-norm of the full vector gradient; the right side
    evaluates the scalar coefficient in front of ``u1'`` on its own and
    multiplies by ``|u1|_p``.
    """
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if U.ndim != 2 or U.shape[1] != 1 or V.shape[1] != 1:
        raise ValueError("the equivalence holds for k = 1 only")
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    x1 = np.asarray(x1, dtype=np.float64).ravel()
    x2 = np.asarray(x2, dtype=np.float64).ravel()
    u1 = U[:, 0]
    z1 = float(x1 @ u1)
    z2 = float(x2 @ V[:, 0])
    if u1.any():
        g1, _ = closed_form_common_grad(U, V, x1, x2)
        lhs = float(np.linalg.norm(g1, ord=p))
    else:
        lhs = 0.0
    if abs(z1) < EPS_NORM or abs(z2) < EPS_NORM:
        # zero basis or degenerate latent: the gradient vanishes identically
        return lhs, 0.0
    t1, t2 = np.sign(z1), np.sign(z2)
    cos = t1 * t2
    c = (z1 * z2 / abs(z1)) * (t2 - cos * t1) + cos * z2
    rhs = abs(c) * float(np.linalg.norm(u1, ord=p))
    return lhs, rhs


def random_linear_instance(rng, d1, d2, k, cond_max=1e6):
    """Standard Gaussian maps, rejecting ill-conditioned draws."""
    while True:
        U = rng.standard_normal((d1, k))
        V = rng.standard_normal((d2, k))
        if np.linalg.cond(U) < cond_max and np.linalg.cond(V) < cond_max:
            return U, V
