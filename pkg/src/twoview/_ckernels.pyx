# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled elementwise kernels.

Every routine mirrors a function in ``_pykernels`` with the same signature and
the same floating point operation order, so the two backends agree to the
last bit on IEEE hardware (no fast-math, no FMA contraction).
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def relu(x):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] src = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty_like(src)
    cdef Py_ssize_t i, n = src.shape[0]
    cdef double v
    with nogil:
        for i in range(n):
            v = src[i]
            out[i] = v if v > 0.0 else 0.0
    return out.reshape(np.shape(x))


def relu_mask(g, x):
    gs = np.ascontiguousarray(g, dtype=np.float64).ravel()
    xs = np.ascontiguousarray(x, dtype=np.float64).ravel()
    if gs.shape[0] != xs.shape[0]:
        raise ValueError("relu_mask: shape mismatch")
    out = np.empty_like(gs)
    cdef const double[::1] gv = gs
    cdef const double[::1] xv = xs
    cdef double[::1] ov = out
    cdef Py_ssize_t i, n = gv.shape[0]
    cdef double gi, xi
    with nogil:
        for i in range(n):
            # both loads unconditional so the select compiles without a branch
            gi = gv[i]
            xi = xv[i]
            ov[i] = gi if xi > 0.0 else 0.0
    return out.reshape(np.shape(g))


def col_moments(x):
    """Column mean and population variance of a 2-D array (two-pass)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] a = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0], d = a.shape[1], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=1] mean = np.zeros(d)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] var = np.zeros(d)
    cdef double t
    if n == 0:
        raise ValueError("col_moments: empty input")
    with nogil:
        for i in range(n):
            for j in range(d):
                mean[j] += a[i, j]
        for j in range(d):
            mean[j] = mean[j] / n
        for i in range(n):
            for j in range(d):
                t = a[i, j] - mean[j]
                var[j] += t * t
        for j in range(d):
            var[j] = var[j] / n
    return mean, var


def adam_update(p, g, m, v, double lr, double beta1, double beta2,
                double eps, double bc1, double bc2):
    """Fused Adam step. Updates ``m`` and ``v`` in place, returns new params."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ps = np.ascontiguousarray(p, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] gs = np.ascontiguousarray(g, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ms = m.reshape(-1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] vs = v.reshape(-1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty_like(ps)
    cdef Py_ssize_t i, n = ps.shape[0]
    cdef double gi, mh, vh
    if gs.shape[0] != n or ms.shape[0] != n or vs.shape[0] != n:
        raise ValueError("adam_update: shape mismatch")
    with nogil:
        for i in range(n):
            gi = gs[i]
            ms[i] = beta1 * ms[i] + (1.0 - beta1) * gi
            vs[i] = beta2 * vs[i] + (1.0 - beta2) * (gi * gi)
            mh = ms[i] / bc1
            vh = vs[i] / bc2
            out[i] = ps[i] - lr * mh / (sqrt(vh) + eps)
    return out.reshape(np.shape(p))
