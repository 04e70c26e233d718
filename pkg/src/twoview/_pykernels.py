"""Pure-numpy implementations of the elementwise kernels.

Drop-in fallback for ``_ckernels`` when the compiled extension is missing.
"""
import numpy as np


def relu(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0.0, x, 0.0)


def relu_mask(g, x):
    g = np.asarray(g, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if g.size != x.size:
        raise ValueError("relu_mask: shape mismatch")
    return np.where(x.reshape(g.shape) > 0.0, g, 0.0)


def col_moments(x):
    """Column mean and population variance of a 2-D array (two-pass)."""
    a = np.ascontiguousarray(x, dtype=np.float64)
    n = a.shape[0]
    if n == 0:
        raise ValueError("col_moments: empty input")
    mean = np.add.reduce(a, axis=0) / n
    t = a - mean
    var = np.add.reduce(t * t, axis=0) / n
    return mean, var


def adam_update(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """Fused Adam step. Updates ``m`` and ``v`` in place, returns new params."""
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if not (p.shape == g.shape == m.shape == v.shape):
        raise ValueError("adam_update: shape mismatch")
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    mh = m / bc1
    vh = v / bc2
    return p - lr * mh / (np.sqrt(vh) + eps)
