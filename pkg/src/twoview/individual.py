"""Individual component, trained against a frozen common component.

Each view gets an encoder ``X_i -> H_i`` (whitened, q columns) and a decoder
that reconstructs ``X_i`` from ``[z_i; h_i]``. The loss adds a penalty on the
cross-correlation between whitened common and individual latents.
"""
from __future__ import annotations

import logging

import numpy as np

from twoview import autodiff as ad
from twoview.autodiff import Tensor
from twoview.common import TrainingDiverged
from twoview.config import TrainConfig
from twoview.data import batch_iterator
from twoview.linalg import whiten
from twoview.nn import Mlp
from twoview.optim import Adam

log = logging.getLogger(__name__)


class IndividualComponent:
    def __init__(self, encoder1, encoder2, decoder1, decoder2, common=None):
        self.encoders = (encoder1, encoder2)
        self.decoders = (decoder1, decoder2)
        q = encoder1.out_dim
        if encoder2.out_dim != q:
            raise ValueError("individual encoders must share q")
        for dec, enc in zip(self.decoders, self.encoders):
            if dec.whiten:
                raise ValueError("decoders must not whiten their output")
            if dec.out_dim != enc.in_dim:
                raise ValueError("decoder output must match the view dimension")
        if common is not None:
            self.attach(common)
        else:
            self.common = None

    def attach(self, common):
        for dec in self.decoders:
            if dec.in_dim != common.k + self.q:
                raise ValueError(f"decoder input must be k+q = {common.k + self.q}")
        self.common = common

    @classmethod
    def create(cls, d1, d2, config: TrainConfig, common=None):
        rng = np.random.default_rng([config.seed, 2])
        seeds = rng.integers(0, 2**63 - 1, size=4)
        k, q, hidden = config.k, config.q, list(config.hidden)
        if common is not None:
            k = common.k
        enc = [Mlp([d, *hidden, q], config.whiten, config.momentum, s) for d, s in zip((d1, d2), seeds[:2])]
        dec = [Mlp([k + q, *hidden[::-1], d], False, rng=s) for d, s in zip((d1, d2), seeds[2:])]
        return cls(enc[0], enc[1], dec[0], dec[1], common)

    @property
    def q(self):
        return self.encoders[0].out_dim

    def encoder(self, view):
        return self.encoders[_vi(view)]

    def decoder(self, view):
        return self.decoders[_vi(view)]

    def parameters(self):
        out = []
        for m in (*self.encoders, *self.decoders):
            out += m.parameters()
        return out

    def encode(self, X, view, train=False):
        X = np.asarray(X, dtype=np.float64)
        if train and X.shape[0] < 2:
            raise ValueError("train-mode encoding needs a batch of at least 2")
        return self.encoder(view).encode(X, train=train)

    def reconstruct(self, Z, H, view):
        """Decoder output for the concatenation ``[Z, H]`` (z block first)."""
        Z = np.asarray(Z, dtype=np.float64)
        H = np.asarray(H, dtype=np.float64)
        if Z.shape[0] != H.shape[0]:
            raise ad.ShapeError("z and h batches differ in length")
        with ad.no_grad():
            return self.decoder(view)(Tensor(np.concatenate([Z, H], axis=1))).data


def _vi(view):
    if view not in (1, 2):
        raise ValueError("view must be 1 or 2")
    return view - 1


def individual_loss(X, Xhat, Zw, Hw, nu):
    """Squared reconstruction error (summed over the batch) plus
    ``nu * |Z'H/n|_F^2`` on whitened latents. Returns ``(node, parts)``."""
    X, Xhat, Zw, Hw = (ad.as_tensor(a) for a in (X, Xhat, Zw, Hw))
    if X.shape != Xhat.shape:
        raise ad.ShapeError(f"reconstruction shape {Xhat.shape} vs data {X.shape}")
    if Zw.shape[0] != Hw.shape[0] or Zw.shape[0] != X.shape[0]:
        raise ad.ShapeError("latent batches do not match the data")
    n = X.shape[0]
    r = Xhat - X
    recon = (r * r).sum()
    delta = Zw.T @ Hw * (1.0 / n)
    decor = (delta * delta).sum() * nu
    return recon + decor, {"recon": recon.item(), "decor": decor.item()}


def individual_batch_loss(individual, common_latents, X, view, nu, update_stats=True):
    enc, dec = individual.encoder(view), individual.decoder(view)
    Z = common_latents
    Zw, _ = whiten(Z)
    h = enc.raw(Tensor(X))
    hw = enc.batch_whiten(h, update_stats)[0]
    Xhat = dec(ad.concat([Tensor(Z), hw], axis=1))
    return individual_loss(X, Xhat, Zw, hw, nu)


def train_individual(config: TrainConfig, X1, X2, common, on_epoch=None):
    """Train encoders/decoders of both views; the common component is only read."""
    if common is None:
        raise ValueError("a trained common component is required")
    X1 = np.asarray(X1, dtype=np.float64)
    X2 = np.asarray(X2, dtype=np.float64)
    n = X1.shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    if X2.shape[0] != n:
        raise ValueError("views are not paired (row counts differ)")
    before = common.checksum()
    # eval-mode latents of the frozen component, computed once
    Z1 = common.encode(X1, 1)
    Z2 = common.encode(X2, 2)
    ind = IndividualComponent.create(X1.shape[1], X2.shape[1], config, common)
    params = ind.parameters()
    opt = Adam(params, lr=config.lr)
    history = []
    for epoch in range(config.epochs):
        sums, batches = {}, 0
        for b, idx in enumerate(batch_iterator(n, config.batch_size, config.seed, epoch)):
            try:
                l1, p1 = individual_batch_loss(ind, Z1[idx], X1[idx], 1, config.nu1)
                l2, p2 = individual_batch_loss(ind, Z2[idx], X2[idx], 2, config.nu2)
                loss = l1 + l2
                grads = ad.grad(loss, params)
            except ad.NonFiniteError as exc:
                raise TrainingDiverged(f"epoch {epoch} batch {b}: {exc}") from exc
            opt.step([g.data for g in grads])
            parts = {"recon1": p1["recon"], "decor1": p1["decor"],
                     "recon2": p2["recon"], "decor2": p2["decor"], "loss": loss.item()}
            for key, val in parts.items():
                sums[key] = sums.get(key, 0.0) + val
            batches += 1
        row = {"epoch": epoch + 1}
        row.update({key: val / batches for key, val in sums.items()})
        history.append(row)
        log.info("individual epoch %d: %s", epoch + 1, row)
        if on_epoch is not None:
            on_epoch(row)
    if common.checksum() != before:
        raise RuntimeError("common component changed during individual training")
    return ind, history


def cross_decorrelation(individual, common, X, view):
    """Mean |entry| of the whitened common/individual cross-correlation."""
    Zw, _ = whiten(common.encode(X, view))
    Hw, _ = whiten(individual.encode(X, view))
    return float(np.abs(Zw.T @ Hw / X.shape[0]).mean())
