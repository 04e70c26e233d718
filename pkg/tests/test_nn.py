import numpy as np
import pytest

from twoview import autodiff as ad
from twoview.autodiff import Tensor
from twoview.nn import Mlp


def test_forward_matches_numpy(rng):
    net = Mlp([4, 6, 3], whiten=False, rng=1)
    X = rng.standard_normal((5, 4))
    W0, b0, W1, b1 = (p.data for p in net.parameters())
    expected = np.maximum(X @ W0 + b0, 0) @ W1 + b1
    np.testing.assert_allclose(net.encode(X), expected, rtol=1e-13)


def test_init_is_glorot_uniform_and_seeded():
    a, b = Mlp([300, 200], rng=5), Mlp([300, 200], rng=5)
    np.testing.assert_array_equal(a.weights[0].data, b.weights[0].data)
    bound = np.sqrt(6 / 500)
    assert np.abs(a.weights[0].data).max() <= bound
    assert np.abs(a.weights[0].data).max() > 0.95 * bound
    np.testing.assert_array_equal(a.biases[0].data, 0.0)


def test_train_mode_whitens_and_updates_running_stats(rng):
    net = Mlp([3, 4], whiten=True, momentum=0.9, rng=0)
    X = rng.standard_normal((64, 3)) * 2 + 1
    Z = net.encode(X, train=True)
    np.testing.assert_allclose(Z.mean(0), 0, atol=1e-12)
    np.testing.assert_allclose(Z.var(0), 1, rtol=1e-10)
    raw = net.raw(Tensor(X)).data
    np.testing.assert_allclose(net.running_mean, 0.1 * raw.mean(0), rtol=1e-12)
    np.testing.assert_allclose(net.running_var, 0.9 + 0.1 * raw.var(0), rtol=1e-12)


def test_degenerate_column_is_masked():
    net = Mlp([2, 2], whiten=True, rng=0)
    net.weights[0].data[:, 1] = 0.0
    X = np.random.default_rng(0).standard_normal((10, 2))
    z = net(Tensor(X, True), train=True)
    assert net.last_degenerate.tolist() == [False, True]
    np.testing.assert_array_equal(z.data[:, 1], 0.0)


def test_state_roundtrip_and_checksum(rng):
    a = Mlp([3, 5, 2], rng=1)
    a.running_mean = rng.standard_normal(2)
    b = Mlp([3, 5, 2], rng=2)
    assert a.checksum() != b.checksum()
    b.load_state_arrays([x.copy() for x in a.state_arrays()])
    assert a.checksum() == b.checksum()
    with pytest.raises(ValueError):
        b.load_state_arrays(a.state_arrays()[:-1] + [np.zeros(3)])


def test_input_width_checked():
    with pytest.raises(ad.ShapeError):
        Mlp([3, 2]).encode(np.ones((2, 4)))
    with pytest.raises(ValueError):
        Mlp([3])
