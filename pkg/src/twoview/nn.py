"""Fully connected ReLU networks with optional terminal batch whitening."""
import numpy as np

from twoview import autodiff as ad
from twoview.autodiff import Tensor
from twoview.linalg import EPS_WHITE


class Mlp:
    """``sizes[0] -> ... -> sizes[-1]`` with ReLU on hidden layers.

    When ``whiten`` is set the output is column-whitened: with the batch
    statistics in train mode (running statistics updated with ``momentum``)
    and with the running statistics in eval mode.
    """

    def __init__(self, sizes, whiten=True, momentum=0.9, rng=None):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"bad layer sizes {sizes}")
        self.sizes = sizes
        self.whiten = bool(whiten)
        self.momentum = float(momentum)
        rng = np.random.default_rng(rng)
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), True))
            self.biases.append(Tensor(np.zeros(fan_out), True))
        self.running_mean = np.zeros(sizes[-1])
        self.running_var = np.ones(sizes[-1])
        self.last_degenerate = np.zeros(sizes[-1], dtype=bool)

    @property
    def in_dim(self):
        return self.sizes[0]

    @property
    def out_dim(self):
        return self.sizes[-1]

    def parameters(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def raw(self, x):
        """Forward pass up to (not including) the whitening layer."""
        x = ad.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ad.ShapeError(f"expected (n, {self.in_dim}) input, got {x.shape}")
        h = x
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < last:
                h = h.relu()
        return h

    def batch_whiten(self, z, update_stats=True):
        """Whiten ``z`` with its own batch statistics (differentiable)."""
        if z.shape[0] < 2:
            raise ValueError("batch whitening needs at least 2 rows")
        mu = z.mean(axis=0)
        var = z.var(axis=0)
        degenerate = var.data < EPS_WHITE**2
        self.last_degenerate = degenerate
        zhat = (z - mu) / var.sqrt()
        if degenerate.any():
            zhat = zhat * Tensor((~degenerate).astype(np.float64))
        if update_stats and self.whiten:
            m = self.momentum
            self.running_mean = m * self.running_mean + (1.0 - m) * mu.data
            self.running_var = m * self.running_var + (1.0 - m) * var.data
        return zhat, mu.data, var.data

    def fixed_whiten(self, z, mean, var):
        """Affine whitening with given (constant) statistics."""
        degenerate = var < EPS_WHITE**2
        scale = np.where(degenerate, 0.0, 1.0 / np.sqrt(np.where(degenerate, 1.0, var)))
        return (z - Tensor(mean)) * Tensor(scale)

    def __call__(self, x, train=False):
        z = self.raw(x)
        if train:
            return self.batch_whiten(z)[0]
        if self.whiten:
            self.last_degenerate = self.running_var < EPS_WHITE**2
            return self.fixed_whiten(z, self.running_mean, self.running_var)
        return z

    def encode(self, X, train=False):
        """Numpy in, numpy out; no graph is recorded."""
        with ad.no_grad():
            return self(Tensor(X), train=train).data

    def state_arrays(self):
        """All state in checkpoint order: W0, b0, W1, b1, ..., [running mean, var]."""
        arrs = []
        for W, b in zip(self.weights, self.biases):
            arrs += [W.data, b.data]
        if self.whiten:
            arrs += [self.running_mean, self.running_var]
        return arrs

    def load_state_arrays(self, arrs):
        arrs = list(arrs)
        for W, b in zip(self.weights, self.biases):
            w_arr, b_arr = arrs.pop(0), arrs.pop(0)
            if w_arr.shape != W.shape or b_arr.shape != b.shape:
                raise ValueError("state shape mismatch")
            W.data, b.data = w_arr, b_arr
        if self.whiten:
            mean, var = arrs.pop(0), arrs.pop(0)
            if mean.shape != (self.out_dim,) or var.shape != (self.out_dim,):
                raise ValueError("running statistics shape mismatch")
            self.running_mean, self.running_var = mean, var
        if arrs:
            raise ValueError("unexpected extra state arrays")

    def checksum(self):
        import zlib

        crc = 0
        for a in self.state_arrays():
            crc = zlib.crc32(np.ascontiguousarray(a, dtype="<f8").tobytes(), crc)
        return crc
