"""Reverse-mode automatic differentiation over dense float64 arrays.

Every vector-Jacobian product is written in terms of :class:`Tensor`
operations, so gradients computed with ``create_graph=True`` are ordinary
graph nodes and can be differentiated again (reverse-over-reverse). That is
what lets a penalty on an input gradient take part in training.

Graph recording is define-by-run: an op applied to at least one tensor that
requires grad produces a result linked to its inputs. A :class:`Tape`, when
active, additionally keeps the ordered node list so the computation can be
replayed against new leaf values with :func:`evaluate`.
"""
from __future__ import annotations

import itertools
import math
import threading
from contextlib import contextmanager

import numpy as np

from twoview import kernels

CLAMP_EPS = 1e-12


class AutodiffError(Exception):
    pass


class ShapeError(AutodiffError, ValueError):
    pass


class NonFiniteError(AutodiffError, FloatingPointError):
    pass


class UnboundLeafError(AutodiffError, KeyError):
    pass


class ClampError(AutodiffError, FloatingPointError):
    """Raised in strict mode when a sqrt/division guard engages."""


class _State(threading.local):
    def __init__(self):
        self.grad_enabled = True
        self.strict = False
        self.tapes = []


_state = _State()
_uids = itertools.count()


@contextmanager
def no_grad():
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextmanager
def enable_grad(flag=True):
    prev = _state.grad_enabled
    _state.grad_enabled = flag
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextmanager
def strict_mode(flag=True):
    """Make the sqrt/division clamps raise :class:`ClampError`."""
    prev = _state.strict
    _state.strict = flag
    try:
        yield
    finally:
        _state.strict = prev


def set_strict(flag):
    _state.strict = bool(flag)


def _check_finite(arr, opname):
    # cheap reduction first, full scan only on suspicion
    s = float(np.sum(arr)) if arr.size else 0.0
    if not math.isfinite(s) and not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite value produced by {opname}")


class Tensor:
    """A float64 array plus an optional link to the node that produced it."""

    __slots__ = ("data", "requires_grad", "node", "uid", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "leaf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node = None
        self.uid = next(_uids)
        self.name = name

    @classmethod
    def _from_op(cls, data, node):
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = node is not None
        t.node = node
        t.uid = next(_uids)
        t.name = None
        return t

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self.node is None

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def var(self, axis=0):
        return var(self, axis=axis)

    def square(self):
        return square(self)

    def sqrt(self):
        return sqrt(self)

    def relu(self):
        return relu(self)

    def abs(self):
        return tabs(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Node:
    """One recorded primitive application."""

    __slots__ = ("op", "inputs", "attrs", "out_uid", "out_shape")

    def __init__(self, op, inputs, attrs, out_uid, out_shape):
        self.op = op
        self.inputs = inputs
        self.attrs = attrs
        self.out_uid = out_uid
        self.out_shape = out_shape

    def __repr__(self):
        return f"Node({self.op.name}, out={self.out_uid})"


class Tape:
    """Ordered record of the primitive ops executed while the tape is active.

    Nodes are appended in execution order, which is a topological order.
    Leaves with ``requires_grad`` (parameters and differentiable inputs) are
    marked so :func:`evaluate` can insist that every one of them is bound.
    """

    def __init__(self):
        self.nodes = []
        self.leaves = {}
        self._outputs = set()

    def __enter__(self):
        _state.tapes.append(self)
        return self

    def __exit__(self, *exc):
        _state.tapes.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def _record(self, node):
        for t in node.inputs:
            if t.node is None and t.uid not in self._outputs:
                self.leaves.setdefault(t.uid, t)
        self._outputs.add(node.out_uid)
        self.nodes.append(node)

    def marked_leaves(self):
        return [t for t in self.leaves.values() if t.requires_grad]

    def contains(self, t):
        return t.uid in self.leaves or t.uid in self._outputs


class Op:
    """Base primitive. Subclasses define ``forward`` (numpy) and ``vjp`` (Tensor)."""

    name = "op"

    @staticmethod
    def forward(*arrays, **attrs):
        raise NotImplementedError

    @staticmethod
    def vjp(g, inputs, out, **attrs):
        raise NotImplementedError


def _apply(op, inputs, **attrs):
    inputs = tuple(as_tensor(x) for x in inputs)
    out = op.forward(*(t.data for t in inputs), **attrs)
    _check_finite(out, op.name)
    if _state.grad_enabled and any(t.requires_grad for t in inputs):
        t = Tensor._from_op(out, None)
        node = Node(op, inputs, attrs, t.uid, out.shape)
        t.node = node
        t.requires_grad = True
        for tape in _state.tapes:
            tape._record(node)
        return t
    return Tensor._from_op(out, None)


def _guard(arr, what):
    small = np.abs(arr) < CLAMP_EPS
    if small.any():
        if _state.strict:
            raise ClampError(f"{what} clamped at {CLAMP_EPS:g}")
        return np.where(small, np.where(arr < 0, -CLAMP_EPS, CLAMP_EPS), arr)
    return arr


def _sum_to_shape(arr, shape):
    if arr.shape == shape:
        return arr
    lead = arr.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and arr.shape[i + lead] != 1
    )
    out = arr.sum(axis=axes, keepdims=True)
    return out.reshape(shape)


def _broadcast_shape(*shapes):
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None


# --------------------------------------------------------------------------
# primitives

class Add(Op):
    name = "add"

    @staticmethod
    def forward(a, b):
        _broadcast_shape(a.shape, b.shape)
        return a + b

    @staticmethod
    def vjp(g, inputs, out):
        a, b = inputs
        return sum_to(g, a.shape), sum_to(g, b.shape)


class Sub(Op):
    name = "sub"

    @staticmethod
    def forward(a, b):
        _broadcast_shape(a.shape, b.shape)
        return a - b

    @staticmethod
    def vjp(g, inputs, out):
        a, b = inputs
        return sum_to(g, a.shape), sum_to(neg(g), b.shape)


class Neg(Op):
    name = "neg"

    @staticmethod
    def forward(a):
        return -a

    @staticmethod
    def vjp(g, inputs, out):
        return (neg(g),)


class Mul(Op):
    name = "mul"

    @staticmethod
    def forward(a, b):
        _broadcast_shape(a.shape, b.shape)
        return a * b

    @staticmethod
    def vjp(g, inputs, out):
        a, b = inputs
        return sum_to(mul(g, b), a.shape), sum_to(mul(g, a), b.shape)


class Div(Op):
    name = "div"

    @staticmethod
    def forward(a, b):
        _broadcast_shape(a.shape, b.shape)
        return a / _guard(b, "denominator")

    @staticmethod
    def vjp(g, inputs, out):
        a, b = inputs
        ga = sum_to(div(g, b), a.shape)
        gb = sum_to(neg(div(mul(g, out), b)), b.shape)
        return ga, gb


class Square(Op):
    name = "square"

    @staticmethod
    def forward(a):
        return a * a

    @staticmethod
    def vjp(g, inputs, out):
        (a,) = inputs
        return (mul(g, mul(a, 2.0)),)


class Sqrt(Op):
    name = "sqrt"

    @staticmethod
    def forward(a):
        if (a < CLAMP_EPS).any():
            if _state.strict:
                raise ClampError(f"radicand clamped at {CLAMP_EPS:g}")
            a = np.maximum(a, CLAMP_EPS)
        return np.sqrt(a)

    @staticmethod
    def vjp(g, inputs, out):
        return (div(mul(g, 0.5), out),)


class Abs(Op):
    name = "abs"

    @staticmethod
    def forward(a):
        return np.abs(a)

    @staticmethod
    def vjp(g, inputs, out):
        (a,) = inputs
        # sign(0) = 0: subgradient choice for the L1 term
        return (mul(g, Tensor(np.sign(a.data))),)


class Relu(Op):
    name = "relu"

    @staticmethod
    def forward(a):
        return kernels.relu(a)

    @staticmethod
    def vjp(g, inputs, out):
        (a,) = inputs
        return (relu_mask(g, a),)


class ReluMask(Op):
    """``g * (x > 0)``; the mask is piecewise constant so d/dx is zero."""

    name = "relu_mask"

    @staticmethod
    def forward(g, x):
        if g.shape != x.shape:
            raise ShapeError(f"relu_mask shapes {g.shape} vs {x.shape}")
        return kernels.relu_mask(g, x)

    @staticmethod
    def vjp(gg, inputs, out):
        _, x = inputs
        return relu_mask(gg, x), None


class MatMul(Op):
    name = "matmul"

    @staticmethod
    def forward(a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul shapes {a.shape} @ {b.shape}")
        return a @ b

    @staticmethod
    def vjp(g, inputs, out):
        a, b = inputs
        # skip the (large) product for inputs such as data batches
        ga = matmul(g, transpose(b)) if a.requires_grad else None
        gb = matmul(transpose(a), g) if b.requires_grad else None
        return ga, gb


class Transpose(Op):
    name = "transpose"

    @staticmethod
    def forward(a):
        if a.ndim != 2:
            raise ShapeError("transpose expects a 2-D tensor")
        return a.T

    @staticmethod
    def vjp(g, inputs, out):
        return (transpose(g),)


class Sum(Op):
    name = "sum"

    @staticmethod
    def forward(a, axis=None, keepdims=False):
        return np.asarray(np.sum(a, axis=axis, keepdims=keepdims), dtype=np.float64)

    @staticmethod
    def vjp(g, inputs, out, axis=None, keepdims=False):
        (a,) = inputs
        if axis is not None and not keepdims:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            axes = tuple(ax % a.ndim for ax in axes)
            shape = tuple(1 if i in axes else s for i, s in enumerate(a.shape))
            g = reshape(g, shape)
        elif axis is None and not keepdims:
            g = reshape(g, (1,) * a.ndim)
        return (broadcast_to(g, a.shape),)


class Var(Op):
    """Population variance along ``axis`` (divide by n)."""

    name = "var"

    @staticmethod
    def forward(a, axis=0):
        if a.ndim == 2 and axis == 0:
            return kernels.col_moments(a)[1]
        return np.var(a, axis=axis)

    @staticmethod
    def vjp(g, inputs, out, axis=0):
        (a,) = inputs
        n = a.shape[axis]
        centered = sub(a, mean(a, axis=axis, keepdims=True))
        shape = list(a.shape)
        shape[axis] = 1
        return (mul(mul(reshape(g, tuple(shape)), centered), 2.0 / n),)


class BroadcastTo(Op):
    name = "broadcast_to"

    @staticmethod
    def forward(a, shape):
        return np.array(np.broadcast_to(a, shape))

    @staticmethod
    def vjp(g, inputs, out, shape):
        (a,) = inputs
        return (sum_to(g, a.shape),)


class SumTo(Op):
    name = "sum_to"

    @staticmethod
    def forward(a, shape):
        return _sum_to_shape(a, tuple(shape))

    @staticmethod
    def vjp(g, inputs, out, shape):
        (a,) = inputs
        return (broadcast_to(g, a.shape),)


class Reshape(Op):
    name = "reshape"

    @staticmethod
    def forward(a, shape):
        try:
            return a.reshape(shape)
        except ValueError as exc:
            raise ShapeError(str(exc)) from None

    @staticmethod
    def vjp(g, inputs, out, shape):
        (a,) = inputs
        return (reshape(g, a.shape),)


class GetItem(Op):
    name = "getitem"

    @staticmethod
    def forward(a, idx):
        return np.array(a[idx], dtype=np.float64)

    @staticmethod
    def vjp(g, inputs, out, idx):
        (a,) = inputs
        return (scatter(g, idx, a.shape),)


class Scatter(Op):
    """Zeros of ``shape`` with ``g`` added at ``idx`` (adjoint of indexing)."""

    name = "scatter"

    @staticmethod
    def forward(g, idx, shape):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return out

    @staticmethod
    def vjp(gg, inputs, out, idx, shape):
        return (getitem(gg, idx),)


class Concat(Op):
    name = "concat"

    @staticmethod
    def forward(*arrays, axis=0):
        try:
            return np.concatenate(arrays, axis=axis)
        except ValueError as exc:
            raise ShapeError(str(exc)) from None

    @staticmethod
    def vjp(g, inputs, out, axis=0):
        grads = []
        start = 0
        for t in inputs:
            stop = start + t.shape[axis]
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(start, stop)
            grads.append(getitem(g, tuple(idx)))
            start = stop
        return tuple(grads)


# --------------------------------------------------------------------------
# functional front end

def add(a, b):
    return _apply(Add, (a, b))


def sub(a, b):
    return _apply(Sub, (a, b))


def neg(a):
    return _apply(Neg, (a,))


def mul(a, b):
    return _apply(Mul, (a, b))


def div(a, b):
    return _apply(Div, (a, b))


def square(a):
    return _apply(Square, (a,))


def sqrt(a):
    return _apply(Sqrt, (a,))


def tabs(a):
    return _apply(Abs, (a,))


def relu(a):
    return _apply(Relu, (a,))


def relu_mask(g, x):
    return _apply(ReluMask, (g, x))


def matmul(a, b):
    return _apply(MatMul, (a, b))


def transpose(a):
    return _apply(Transpose, (a,))


def tsum(a, axis=None, keepdims=False):
    return _apply(Sum, (a,), axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def var(a, axis=0):
    return _apply(Var, (a,), axis=axis)


def broadcast_to(a, shape):
    a = as_tensor(a)
    if a.shape == tuple(shape):
        return a
    return _apply(BroadcastTo, (a,), shape=tuple(shape))


def sum_to(a, shape):
    a = as_tensor(a)
    if a.shape == tuple(shape):
        return a
    return _apply(SumTo, (a,), shape=tuple(shape))


def reshape(a, shape):
    a = as_tensor(a)
    if a.shape == tuple(shape):
        return a
    return _apply(Reshape, (a,), shape=tuple(shape))


def getitem(a, idx):
    return _apply(GetItem, (a,), idx=idx)


def scatter(g, idx, shape):
    return _apply(Scatter, (g,), idx=idx, shape=tuple(shape))


def concat(tensors, axis=0):
    return _apply(Concat, tuple(tensors), axis=axis)


# --------------------------------------------------------------------------
# differentiation

def _topo(output):
    order, seen = [], set()
    stack = [(output, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if t.uid in seen:
            continue
        seen.add(t.uid)
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.inputs:
                if p.requires_grad and p.uid not in seen:
                    stack.append((p, False))
    return order


def grad(output, wrt, create_graph=False, grad_output=None):
    """Gradients of scalar ``output`` with respect to each tensor in ``wrt``.

    With ``create_graph=True`` the returned tensors are graph nodes and can be
    differentiated again. Inputs that ``output`` does not depend on receive
    zeros.
    """
    single = isinstance(wrt, Tensor)
    wrt = [wrt] if single else list(wrt)
    if grad_output is None:
        if output.size != 1:
            raise ShapeError(f"grad needs a scalar output, got shape {output.shape}")
        seed = Tensor(np.ones_like(output.data))
    else:
        seed = as_tensor(grad_output)
        if seed.shape != output.shape:
            raise ShapeError("grad_output shape does not match output")

    grads = {output.uid: seed}
    keep = {w.uid for w in wrt}
    with enable_grad(create_graph):
        for t in reversed(_topo(output)):
            if t.node is None or t.uid in keep:
                g = grads.get(t.uid)
            else:
                g = grads.pop(t.uid, None)
            if g is None or t.node is None:
                continue
            node = t.node
            contribs = node.op.vjp(g, node.inputs, t, **node.attrs)
            for inp, c in zip(node.inputs, contribs):
                if c is None or not inp.requires_grad:
                    continue
                prev = grads.get(inp.uid)
                grads[inp.uid] = c if prev is None else add(prev, c)
    out = []
    for w in wrt:
        g = grads.get(w.uid)
        if g is None:
            g = Tensor(np.zeros_like(w.data))
        elif not create_graph and g.requires_grad:
            g = g.detach()
        out.append(g)
    return out[0] if single else out


def _check_on_tape(tape, output, wrt):
    if output.size != 1:
        raise ShapeError(f"output must be scalar, got shape {output.shape}")
    if tape is not None:
        for w in wrt:
            if not tape.contains(w):
                raise AutodiffError(f"leaf {w!r} is not on the tape")


def backward(tape, output, wrt):
    """Exact gradients as plain arrays: ``{leaf: ndarray}``."""
    wrt = list(wrt)
    _check_on_tape(tape, output, wrt)
    gs = grad(output, wrt, create_graph=False)
    return {w: g.data for w, g in zip(wrt, gs)}


def grad_as_graph(tape, output, wrt):
    """Gradients as differentiable tensors (recorded onto ``tape`` if active)."""
    wrt = list(wrt)
    _check_on_tape(tape, output, wrt)
    if tape is not None and tape not in _state.tapes:
        with tape:
            return grad(output, wrt, create_graph=True)
    return grad(output, wrt, create_graph=True)


def evaluate(tape, bindings, outputs):
    """Replay ``tape`` with new leaf values.

    ``bindings`` maps leaf tensors to arrays; every marked leaf (one with
    ``requires_grad``) must be bound. Unmarked leaves keep their recorded
    values. Returns arrays for ``outputs`` (a tensor or a list of tensors).
    """
    single = isinstance(outputs, Tensor)
    outputs = [outputs] if single else list(outputs)
    values = {}
    for leaf in tape.leaves.values():
        if leaf in bindings:
            arr = np.asarray(bindings[leaf], dtype=np.float64)
            if arr.shape != leaf.shape:
                raise ShapeError(
                    f"binding for {leaf!r} has shape {arr.shape}, expected {leaf.shape}"
                )
            _check_finite(arr, "binding")
            values[leaf.uid] = arr
        elif leaf.requires_grad:
            raise UnboundLeafError(f"leaf {leaf!r} is not bound")
        else:
            values[leaf.uid] = leaf.data
    for node in tape.nodes:
        args = [values[t.uid] if t.uid in values else t.data for t in node.inputs]
        out = node.op.forward(*args, **node.attrs)
        _check_finite(out, node.op.name)
        values[node.out_uid] = out
    result = []
    for o in outputs:
        if o.uid not in values:
            raise AutodiffError(f"{o!r} was not produced on this tape")
        result.append(values[o.uid])
    return result[0] if single else result
