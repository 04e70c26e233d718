"""Common component: paired encoders trained to produce maximally correlated,
internally decorrelated whitened latents."""
from __future__ import annotations

import logging

import numpy as np

from twoview import autodiff as ad
from twoview.autodiff import Tensor
from twoview.config import TrainConfig
from twoview.data import batch_iterator
from twoview.nn import Mlp
from twoview.optim import Adam
from twoview.scores import common_score_rows, contractive_penalty_rows

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


class CommonComponent:
    def __init__(self, encoder1, encoder2):
        if encoder1.out_dim != encoder2.out_dim:
            raise ValueError("both encoders must output the same dimension k")
        self.encoder1 = encoder1
        self.encoder2 = encoder2

    @classmethod
    def create(cls, d1, d2, config: TrainConfig):
        rng = np.random.default_rng(config.seed)
        seeds = rng.integers(0, 2**63 - 1, size=2)
        return cls(
            Mlp([d1, *config.hidden, config.k], config.whiten, config.momentum, seeds[0]),
            Mlp([d2, *config.hidden, config.k], config.whiten, config.momentum, seeds[1]),
        )

    @property
    def k(self):
        return self.encoder1.out_dim

    def encoder(self, view):
        if view == 1:
            return self.encoder1
        if view == 2:
            return self.encoder2
        raise ValueError("view must be 1 or 2")

    def parameters(self):
        return self.encoder1.parameters() + self.encoder2.parameters()

    def encode(self, X, view, train=False):
        """Common latents ``Z`` (n x k) for one view, as a numpy array."""
        X = np.asarray(X, dtype=np.float64)
        if train and X.shape[0] < 2:
            raise ValueError("train-mode encoding needs a batch of at least 2")
        return self.encoder(view).encode(X, train=train)

    def checksum(self):
        import zlib

        return zlib.crc32(
            self.encoder1.checksum().to_bytes(4, "little")
            + self.encoder2.checksum().to_bytes(4, "little")
        )


def _offdiag_sq(S):
    k = S.shape[0]
    return (S * S * Tensor(1.0 - np.eye(k))).sum()


def common_loss(Z1, Z2, lambda1, lambda2):
    """Correlation loss on whitened latents.

    ``sum_i (1 - C_ii)^2 + lambda1 * offdiag(S1)^2 + lambda2 * offdiag(S2)^2``
    where ``C = Z1'Z2/n`` and ``Si = Zi'Zi/n``. Returns the loss node and a
    dict with each (weighted) term as a float.
    """
    Z1 = ad.as_tensor(Z1)
    Z2 = ad.as_tensor(Z2)
    if Z1.shape != Z2.shape or Z1.ndim != 2:
        raise ad.ShapeError(f"latent shapes differ: {Z1.shape} vs {Z2.shape}")
    n = Z1.shape[0]
    diag = (Z1 * Z2).sum(axis=0) * (1.0 / n)
    corr = ((1.0 - diag) * (1.0 - diag)).sum()
    dec1 = _offdiag_sq(Z1.T @ Z1 * (1.0 / n)) * lambda1
    dec2 = _offdiag_sq(Z2.T @ Z2 * (1.0 / n)) * lambda2
    loss = corr + dec1 + dec2
    return loss, {"corr": corr.item(), "decor1": dec1.item(), "decor2": dec2.item()}


def _score_latents(enc, z, mu, var):
    # eval-mode equivalent with the batch statistics held constant
    return enc.fixed_whiten(z, mu, var) if enc.whiten else z


def raw_batch_stats(component, x1, x2):
    """Mean and population variance of both encoders' pre-whitening outputs."""
    out = []
    with ad.no_grad():
        for enc, x in ((component.encoder1, x1), (component.encoder2, x2)):
            z = enc.raw(Tensor(x))
            out.append((z.data.mean(axis=0), z.data.var(axis=0)))
    return tuple(out)


def common_batch_loss(component, x1, x2, config, update_stats=True, penalty_stats=None):
    """Loss (incl. optional contractive penalty) for one minibatch.

    The penalty differentiates each sample's score w.r.t. its own input with
    the whitening statistics treated as constants: the batch statistics by
    default, or ``penalty_stats`` (as returned by :func:`raw_batch_stats`).
    """
    e1, e2 = component.encoder1, component.encoder2
    need_pen = config.gamma > 0
    t1 = Tensor(x1, requires_grad=need_pen)
    t2 = Tensor(x2, requires_grad=need_pen)
    z1 = e1.raw(t1)
    z2 = e2.raw(t2)
    zh1, mu1, var1 = e1.batch_whiten(z1, update_stats)
    zh2, mu2, var2 = e2.batch_whiten(z2, update_stats)
    loss, parts = common_loss(zh1, zh2, config.lambda1, config.lambda2)
    parts["penalty"] = 0.0
    if need_pen:
        if penalty_stats is not None:
            (mu1, var1), (mu2, var2) = penalty_stats
        s, _ = common_score_rows(_score_latents(e1, z1, mu1, var1), _score_latents(e2, z2, mu2, var2))
        g1, g2 = ad.grad(s.sum(), [t1, t2], create_graph=True)
        n = x1.shape[0]
        pen = (contractive_penalty_rows(g1, config.alpha) + contractive_penalty_rows(g2, config.alpha)).sum()
        pen = pen * (1.0 / (2 * n))
        parts["penalty"] = config.gamma * pen.item()
        loss = loss + pen * config.gamma
    parts["loss"] = loss.item()
    return loss, parts


def total_correlation(component, X1, X2):
    from twoview.data import total_cross_correlation

    return total_cross_correlation(component.encode(X1, 1), component.encode(X2, 2))


def train_common(config: TrainConfig, X1, X2, eval_views=None, component=None, on_epoch=None,
                 eval_every=1):
    """Train the common component with Adam over seeded minibatches.

    ``eval_views`` is an optional ``(X1_test, X2_test)`` pair; when given, the
    history also records its total correlation every ``eval_every`` epochs
    and after the last one (NaN elsewhere). Returns
    ``(component, history)`` where history is a list of per-epoch dicts.
    """
    X1 = np.asarray(X1, dtype=np.float64)
    X2 = np.asarray(X2, dtype=np.float64)
    n = X1.shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    if X2.shape[0] != n:
        raise ValueError("views are not paired (row counts differ)")
    if component is None:
        component = CommonComponent.create(X1.shape[1], X2.shape[1], config)
    params = component.parameters()
    opt = Adam(params, lr=config.lr)
    history = []
    for epoch in range(config.epochs):
        sums, batches = {}, 0
        for b, idx in enumerate(batch_iterator(n, config.batch_size, config.seed, epoch)):
            try:
                loss, parts = common_batch_loss(component, X1[idx], X2[idx], config)
                grads = ad.grad(loss, params)
            except ad.NonFiniteError as exc:
                raise TrainingDiverged(
                    f"epoch {epoch} batch {b}: {exc}; last epoch {history[-1] if history else None}"
                ) from exc
            opt.step([g.data for g in grads])
            for key, val in parts.items():
                sums[key] = sums.get(key, 0.0) + val
            batches += 1
        row = {"epoch": epoch + 1}
        row.update({key: val / batches for key, val in sums.items()})
        if eval_views is not None:
            due = eval_every > 0 and (epoch + 1) % eval_every == 0
            last = epoch + 1 == config.epochs
            row["test_corr"] = total_correlation(component, *eval_views) if due or last else float("nan")
        history.append(row)
        log.info("common epoch %d: %s", epoch + 1, row)
        if on_epoch is not None:
            on_epoch(row)
    return component, history
