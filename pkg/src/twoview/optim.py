"""Adam with bias correction (constant learning rate)."""
from dataclasses import dataclass, field

import numpy as np

from twoview import kernels
from twoview.autodiff import ShapeError


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state, params, grads):
    """Apply one Adam update.

    ``params`` and ``grads`` are sequences of arrays with matching shapes.
    Returns the list of updated parameter arrays; moment buffers in ``state``
    are updated in place and ``state.t`` is incremented.
    """
    params = [np.asarray(p, dtype=np.float64) for p in params]
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    if len(params) != len(grads):
        raise ShapeError("adam_step: params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ShapeError("adam_step: optimizer state does not match params")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"adam_step: shape mismatch {p.shape} / {g.shape}")

    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    return [
        kernels.adam_update(p, g, m, v, state.lr, state.beta1, state.beta2, state.eps, bc1, bc2)
        for p, g, m, v in zip(params, grads, state.m, state.v)
    ]


class Adam:
    """Adam over a list of leaf tensors; replaces each ``tensor.data`` on step."""

    def __init__(self, params, lr=2e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def step(self, grads):
        new = adam_step(self.state, [p.data for p in self.params], grads)
        for p, arr in zip(self.params, new):
            p.data = arr
