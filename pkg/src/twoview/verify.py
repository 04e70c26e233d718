"""Verification battery: closed-form linear oracles and finite-difference
checks of the autodiff engine. Used by ``twoview oracle`` and the tests."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from twoview import autodiff as ad
from twoview import oracle
from twoview.autodiff import Tensor
from twoview.common import CommonComponent, common_batch_loss, raw_batch_stats
from twoview.config import TrainConfig
from twoview.individual import IndividualComponent, individual_batch_loss
from twoview.linalg import orthogonalize_pair
from twoview.nn import Mlp
from twoview.scores import grad_map_common, grad_map_individual

TOL_CLOSED_FORM = 1e-6
TOL_LEMMA_ZERO = 2e-9
TOL_LEMMA_IDENTITY = 1e-12
TOL_NORM_EQUIV = 1e-9
TOL_FD_FIRST = 1e-5
TOL_FD_SECOND = 1e-4


@dataclass
class CheckResult:
    name: str
    instances: int
    max_error: float
    tolerance: float

    @property
    def passed(self):
        return bool(np.isfinite(self.max_error)) and self.max_error < self.tolerance


# --------------------------------------------------------------------------
# helpers

def linear_mlp(M):
    """A single bias-free-at-init linear layer whose weight is ``M`` (d x k)."""
    net = Mlp([M.shape[0], M.shape[1]], whiten=False, rng=0)
    net.weights[0].data = np.array(M, dtype=np.float64)
    return net


def fd_grad(f, arrays, eps=1e-6):
    """Central differences of scalar ``f()`` w.r.t. arrays perturbed in place."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f()
            flat[i] = orig - eps
            fm = f()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * eps)
        out.append(g)
    return out


def rel_error(a, b):
    a = np.concatenate([np.ravel(x) for x in a])
    b = np.concatenate([np.ravel(x) for x in b])
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def tiny_instance(rng, n=8, d1=4, d2=3, k=3, hidden=(5,)):
    """Small random paired data plus common and individual components."""
    cfg = TrainConfig(k=k, hidden=hidden, seed=int(rng.integers(2**31)),
                      lambda1=1.5, lambda2=0.5, nu1=2.0, nu2=3.0, gamma=0.1, alpha=0.5,
                      batch_size=n)
    X1 = rng.standard_normal((n, d1))
    X2 = 0.5 * X1[:, :d2] + rng.standard_normal((n, d2))
    common = CommonComponent.create(d1, d2, cfg)
    # non-zero biases so every path is exercised
    for p in common.parameters():
        p.data = p.data + 0.1 * rng.standard_normal(p.shape)
    ind = IndividualComponent.create(d1, d2, cfg, common)
    for p in ind.parameters():
        p.data = p.data + 0.1 * rng.standard_normal(p.shape)
    for enc in (common.encoder1, common.encoder2, *ind.encoders):
        enc.running_mean = 0.1 * rng.standard_normal(k)
        enc.running_var = 1.0 + rng.random(k)
    return cfg, X1, X2, common, ind


# --------------------------------------------------------------------------
# closed-form checks

def check_common_closed_form(rng, instances=100, fault=0.0):
    """Autodiff common-score maps vs the closed form for linear encoders,
    including orthogonal (zero map) and parallel latent regimes."""
    worst = 0.0
    for i in range(instances):
        regime = i % 3
        # orthogonal latents need k >= 2 (for k = 1 they would be zero)
        k = int(rng.integers(2 if regime == 1 else 1, 5))
        d = int(rng.integers(k + 1, 9))
        U, V = oracle.random_linear_instance(rng, d, d, k)
        x1 = rng.standard_normal(d)
        x2 = rng.standard_normal(d)
        if regime == 1:
            # orthogonal latents: move x2 so that V'x2 is orthogonal to U'x1
            z1 = x1 @ U
            z2 = x2 @ V
            target = z2 - (z2 @ z1) / (z1 @ z1) * z1
            x2 = np.linalg.lstsq(V.T, target, rcond=None)[0]
        elif regime == 2:
            # parallel latents: V'x2 = 2 U'x1
            x2 = np.linalg.lstsq(V.T, 2.0 * (x1 @ U), rcond=None)[0]
        common = CommonComponent(linear_mlp(U), linear_mlp(V))
        res = grad_map_common(common, x1, x2)
        g1, g2 = oracle.closed_form_common_grad(U, V, x1, x2)
        g1 = g1 + fault
        err = max(np.abs(res.maps[1] - g1).max(), np.abs(res.maps[2] - g2).max())
        if regime == 1:
            err = max(err, np.abs(res.maps[1]).max(), np.abs(res.maps[2]).max())
        if regime == 2:
            ref = x1 @ U @ U.T
            cos = res.maps[1] @ ref / (np.linalg.norm(res.maps[1]) * np.linalg.norm(ref))
            err = max(err, 0.0 if cos >= 1 - 1e-9 else 1.0 - cos)
        worst = max(worst, float(err))
    return CheckResult("common-closed-form", instances, worst, TOL_CLOSED_FORM)


def check_individual_closed_form(rng, instances=100, fault=0.0):
    worst = 0.0
    for _ in range(instances):
        d1, d2, k = int(rng.integers(3, 9)), int(rng.integers(3, 9)), int(rng.integers(2, 5))
        U, V = oracle.random_linear_instance(rng, d1, d2, k)
        W = rng.standard_normal((d1, k))
        common = CommonComponent(linear_mlp(U), linear_mlp(V))
        ind = IndividualComponent(linear_mlp(W), linear_mlp(rng.standard_normal((d2, k))),
                                  Mlp([2 * k, d1], False, rng=0), Mlp([2 * k, d2], False, rng=0),
                                  common)
        x1 = rng.standard_normal(d1)
        x2 = rng.standard_normal(d2)
        res = grad_map_individual(ind, common, x1, x2, 1)
        P = orthogonalize_pair(x1 @ U, x2 @ V).projector
        ref = oracle.closed_form_individual_grad(W, P, x1) + fault
        worst = max(worst, float(np.abs(res.maps[1] - ref).max()))
    return CheckResult("individual-closed-form", instances, worst, TOL_CLOSED_FORM)


def check_mahalanobis(rng, instances=100, fault=0.0):
    """Residual equals ``2|w'Su|`` always, and vanishes once ``w`` and ``u``
    are made sample-uncorrelated. Returns two results."""
    ident, zero, hits = 0.0, 0.0, 0
    for _ in range(instances):
        n, d = int(rng.integers(5, 40)), int(rng.integers(2, 8))
        X = rng.standard_normal((n, d))
        w = rng.standard_normal(d)
        u = rng.standard_normal(d)
        S = X.T @ X / n
        res = oracle.mahalanobis_residual(X, w, u) + fault
        ident = max(ident, abs(res - 2 * abs(w @ S @ u)))
        # remove the S-component of u along w
        u0 = u - (w @ S @ u) / (w @ S @ w) * w
        if abs((X @ w) @ (X @ u0) / n) < 1e-9:
            hits += 1
            zero = max(zero, oracle.mahalanobis_residual(X, w, u0) + fault)
    if hits == 0:
        zero = float("inf")
    return (CheckResult("mahalanobis-identity", instances, ident, TOL_LEMMA_IDENTITY),
            CheckResult("mahalanobis-decorrelated", hits, zero, TOL_LEMMA_ZERO))


def check_norm_equivalence(rng, instances=50, fault=0.0):
    worst = 0.0
    for _ in range(instances):
        d1, d2 = int(rng.integers(2, 10)), int(rng.integers(2, 10))
        U, V = oracle.random_linear_instance(rng, d1, d2, 1)
        x1 = rng.standard_normal(d1)
        x2 = rng.standard_normal(d2)
        for p in (1, 2):
            lhs, rhs = oracle.regu_equivalence_check(U, V, x1, x2, p)
            worst = max(worst, abs(lhs - rhs - fault))
    return CheckResult("k1-norm-equivalence", instances, worst, TOL_NORM_EQUIV)


# --------------------------------------------------------------------------
# finite differences

def _params(*components):
    out = []
    for c in components:
        out += c.parameters()
    return out


def fd_first_order(rng, fault=0.0):
    """Relative error of autodiff vs central differences for the common loss,
    the individual loss and both scores on one tiny instance."""
    cfg, X1, X2, common, ind = tiny_instance(rng)
    cfg0 = cfg.with_(gamma=0.0)
    errs = []

    params = common.parameters()
    f = lambda: common_batch_loss(common, X1, X2, cfg0, update_stats=False)[0].item()  # noqa: E731
    loss, _ = common_batch_loss(common, X1, X2, cfg0, update_stats=False)
    auto = [g.data + fault for g in ad.grad(loss, params)]
    errs.append(rel_error(auto, fd_grad(f, [p.data for p in params])))

    Z1 = common.encode(X1, 1)
    iparams = ind.encoder(1).parameters() + ind.decoder(1).parameters()
    f = lambda: individual_batch_loss(ind, Z1, X1, 1, cfg.nu1, False)[0].item()  # noqa: E731
    loss, _ = individual_batch_loss(ind, Z1, X1, 1, cfg.nu1, False)
    auto = [g.data for g in ad.grad(loss, iparams)]
    errs.append(rel_error(auto, fd_grad(f, [p.data for p in iparams])))

    x1, x2 = X1[0].copy(), X2[0].copy()
    res = grad_map_common(common, x1, x2)
    f = lambda: grad_map_common(common, x1, x2).value  # noqa: E731
    errs.append(rel_error([res.maps[1], res.maps[2]], fd_grad(f, [x1, x2])))

    # the projector is held constant, so finite differences fix it too
    P = orthogonalize_pair(common.encode(x1[None], 1)[0], common.encode(x2[None], 2)[0]).projector
    enc = ind.encoder(1)

    def r_of():
        h = enc.encode(x1[None])[0]
        ph = P @ h
        return 0.5 * float(ph @ ph)

    res = grad_map_individual(ind, common, x1, x2, 1)
    errs.append(rel_error([res.maps[1]], fd_grad(r_of, [x1])))
    return max(errs)


def fd_second_order(rng, fault=0.0):
    """Gradient of the contractive penalty w.r.t. parameters (reverse over
    reverse) vs central differences of the penalty value.

    Whitening statistics enter the penalty as constants, so they are frozen
    at their unperturbed values for the differences as well.
    """
    cfg, X1, X2, common, _ = tiny_instance(rng)
    cfg = cfg.with_(lambda1=0.0, lambda2=0.0)
    stats = raw_batch_stats(common, X1, X2)
    params = common.parameters()

    def penalty():
        _, parts = common_batch_loss(common, X1, X2, cfg, False, stats)
        return parts["penalty"]

    with_pen, _ = common_batch_loss(common, X1, X2, cfg, False, stats)
    without, _ = common_batch_loss(common, X1, X2, cfg.with_(gamma=0.0), False)
    g_all = ad.grad(with_pen, params)
    g_loss = ad.grad(without, params)
    auto = [a.data - b.data + fault for a, b in zip(g_all, g_loss)]
    return rel_error(auto, fd_grad(penalty, [p.data for p in params]))


def check_fd(rng, instances, fault=0.0):
    worst = max(fd_first_order(rng, fault) for _ in range(instances))
    return CheckResult("grad-fd", instances, worst, TOL_FD_FIRST)


def check_fd_second(rng, instances, fault=0.0):
    worst = max(fd_second_order(rng, fault) for _ in range(instances))
    return CheckResult("second-order-fd", instances, worst, TOL_FD_SECOND)


def run_suite(seed=0, fault=0.0, fd_instances=5):
    """Run every check; ``fault`` adds a constant to the closed-form common map
    (and nothing else) to demonstrate that the harness notices."""
    rng = np.random.default_rng(seed)
    return [
        check_common_closed_form(rng, 100, fault),
        check_individual_closed_form(rng, 100),
        *check_mahalanobis(rng, 100),
        check_norm_equivalence(rng, 50),
        check_fd(rng, fd_instances),
        check_fd_second(rng, fd_instances),
    ]
