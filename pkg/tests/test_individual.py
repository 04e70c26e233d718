import numpy as np
import pytest

from twoview import autodiff as ad
from twoview.common import train_common
from twoview.config import TrainConfig
from twoview.individual import (
    IndividualComponent,
    cross_decorrelation,
    individual_loss,
    train_individual,
)
from twoview.linalg import whiten


@pytest.fixture
def trained_common(paired):
    X1, X2 = paired
    cfg = TrainConfig(k=2, hidden=(8,), lambda1=1, lambda2=1, lr=5e-3, batch_size=100, epochs=5)
    return train_common(cfg, X1, X2)[0]


def test_loss_value(rng):
    X, Xh = rng.standard_normal((10, 3)), rng.standard_normal((10, 3))
    Z, H = whiten(rng.standard_normal((10, 2)))[0], whiten(rng.standard_normal((10, 2)))[0]
    loss, parts = individual_loss(X, Xh, Z, H, nu=4.0)
    recon = ((Xh - X) ** 2).sum()
    decor = 4.0 * ((Z.T @ H / 10) ** 2).sum()
    assert parts["recon"] == pytest.approx(recon, rel=1e-12)
    assert parts["decor"] == pytest.approx(decor, rel=1e-12)
    assert loss.item() == pytest.approx(recon + decor, rel=1e-12)


def test_loss_shape_errors(rng):
    with pytest.raises(ad.ShapeError):
        individual_loss(np.ones((4, 3)), np.ones((4, 2)), np.ones((4, 2)), np.ones((4, 2)), 1.0)
    with pytest.raises(ad.ShapeError):
        individual_loss(np.ones((4, 3)), np.ones((4, 3)), np.ones((3, 2)), np.ones((4, 2)), 1.0)


def test_decoder_input_is_z_then_h(trained_common):
    cfg = TrainConfig(k=2, q=3, hidden=(8,))
    ind = IndividualComponent.create(8, 7, cfg, trained_common)
    assert ind.decoder(1).in_dim == 5
    Z, H = np.ones((2, 2)), np.zeros((2, 3))
    dec = ind.decoder(1)
    W0 = dec.weights[0].data
    expected = ind.reconstruct(Z, H, 1)
    # swapping the blocks changes the output unless the layout is z first
    dec.weights[0].data = np.vstack([W0[:2], np.zeros_like(W0[2:])])
    np.testing.assert_allclose(ind.reconstruct(Z, H, 1), expected)
    dec.weights[0].data = W0


def test_attach_checks_dimensions(trained_common):
    cfg = TrainConfig(k=3, hidden=(4,))
    ind = IndividualComponent.create(8, 7, cfg)
    with pytest.raises(ValueError):
        ind.attach(trained_common)


def test_training_keeps_common_frozen_and_decorrelates(paired, trained_common):
    X1, X2 = (X / X.std(axis=0) for X in paired)
    before = trained_common.checksum()
    cfg = TrainConfig(k=2, hidden=(8,), nu1=100, nu2=100, lr=5e-3, batch_size=50, epochs=30)
    ind, hist = train_individual(cfg, X1[:300], X2[:300], trained_common)
    assert trained_common.checksum() == before
    assert set(hist[0]) == {"epoch", "recon1", "decor1", "recon2", "decor2", "loss"}
    assert hist[-1]["recon1"] < hist[0]["recon1"]
    assert cross_decorrelation(ind, trained_common, X1[300:], 1) < 0.2


def test_requires_common(paired):
    X1, X2 = paired
    with pytest.raises(ValueError):
        train_individual(TrainConfig(), X1, X2, None)
