import numpy as np
import pytest

from twoview.autodiff import ShapeError, Tensor
from twoview.optim import Adam, AdamState, adam_step


def reference_adam(p, grads, lr=1e-2, b1=0.9, b2=0.999, eps=1e-8):
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    return p


def test_matches_textbook_update(rng):
    p0 = rng.standard_normal((3, 2))
    grads = [rng.standard_normal((3, 2)) for _ in range(5)]
    state = AdamState(lr=1e-2)
    p = p0
    for g in grads:
        (p,) = adam_step(state, [p], [g])
    assert state.t == 5
    np.testing.assert_allclose(p, reference_adam(p0, grads), rtol=1e-13)


def test_first_step_moves_by_lr_against_sign():
    (p,) = adam_step(AdamState(lr=0.1), [np.zeros(3)], [np.array([2.0, -0.5, 1e-3])])
    np.testing.assert_allclose(p, [-0.1, 0.1, -0.1], rtol=1e-4)


def test_minimizes_quadratic():
    w = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    opt = Adam([w], lr=0.1)
    for _ in range(500):
        opt.step([2 * w.data])
    np.testing.assert_allclose(w.data, 0.0, atol=1e-2)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step(AdamState(), [np.zeros(2)], [np.zeros(3)])
    with pytest.raises(ShapeError):
        adam_step(AdamState(), [np.zeros(2)], [])
