# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dense-layer kernels: BLAS matmul with fused bias/activation,
the matching backward pass, and an in-place Adam step.

Signatures and activation codes mirror `_pykernels`; `bicl.nets._backend`
picks whichever of the two imports.
"""

import numpy as np

from libc.math cimport exp as c_exp, sqrt as c_sqrt, tanh as c_tanh
from scipy.linalg.cython_blas cimport dgemm

IDENTITY = 0
RELU = 1
TANH = 2
SOFTMAX = 3


cdef void _gemm_rm(bint ta, bint tb, int m, int n, int k, double alpha,
                   double *a, int lda, double *b, int ldb,
                   double beta, double *c, int ldc) noexcept nogil:
    # Row-major C(m,n) = alpha*opA(A)*opB(B) + beta*C through column-major
    # BLAS: swap the operands, keep each one's transpose flag, and pass each
    # array's row-major width as its leading dimension.
    cdef char fa = c'T' if ta else c'N'
    cdef char fb = c'T' if tb else c'N'
    dgemm(&fb, &fa, &n, &m, &k, &alpha, b, &ldb, a, &lda, &beta, c, &ldc)


def linear_act_forward(double[:, ::1] x, double[:, ::1] w, double[::1] b, int act):
    """act(x @ w + b) for a (batch, fan_in) slab; returns the post-activation."""
    cdef int batch = x.shape[0]
    cdef int fin = x.shape[1]
    cdef int fout = w.shape[1]
    out_arr = np.empty((batch, fout))
    if batch == 0:
        return out_arr
    cdef double[:, ::1] out = out_arr
    cdef int i, j
    cdef double mx, s
    with nogil:
        _gemm_rm(0, 0, batch, fout, fin, 1.0, &x[0, 0], fin, &w[0, 0], fout,
                 0.0, &out[0, 0], fout)
        for i in range(batch):
            for j in range(fout):
                out[i, j] += b[j]
        if act == 1:
            for i in range(batch):
                for j in range(fout):
                    if out[i, j] < 0.0:
                        out[i, j] = 0.0
        elif act == 2:
            for i in range(batch):
                for j in range(fout):
                    out[i, j] = c_tanh(out[i, j])
        elif act == 3:
            for i in range(batch):
                mx = out[i, 0]
                for j in range(1, fout):
                    if out[i, j] > mx:
                        mx = out[i, j]
                s = 0.0
                for j in range(fout):
                    out[i, j] = c_exp(out[i, j] - mx)
                    s += out[i, j]
                for j in range(fout):
                    out[i, j] /= s
    return out_arr


def act_backward(double[:, ::1] g, double[:, ::1] a, int act):
    """Map upstream grad wrt the post-activation a to grad wrt the pre-activation."""
    cdef int batch = g.shape[0]
    cdef int width = g.shape[1]
    out_arr = np.empty((batch, width))
    if batch == 0:
        return out_arr
    cdef double[:, ::1] out = out_arr
    cdef int i, j
    cdef double dot
    with nogil:
        if act == 1:
            for i in range(batch):
                for j in range(width):
                    out[i, j] = g[i, j] if a[i, j] > 0.0 else 0.0
        elif act == 2:
            for i in range(batch):
                for j in range(width):
                    out[i, j] = g[i, j] * (1.0 - a[i, j] * a[i, j])
        elif act == 3:
            for i in range(batch):
                dot = 0.0
                for j in range(width):
                    dot += g[i, j] * a[i, j]
                for j in range(width):
                    out[i, j] = a[i, j] * (g[i, j] - dot)
        else:
            for i in range(batch):
                for j in range(width):
                    out[i, j] = g[i, j]
    return out_arr


def linear_backward(double[:, ::1] delta, double[:, ::1] x_in, double[:, ::1] w,
                    bint want_dx, bint want_params):
    """Gradients of a dense layer given delta = dLoss/d(x_in @ w + b).

    Returns (dw, db, dx); entries not requested are None.
    """
    cdef int batch = delta.shape[0]
    cdef int fout = delta.shape[1]
    cdef int fin = x_in.shape[1]
    dw_arr = None
    db_arr = None
    dx_arr = None
    cdef double[:, ::1] dw
    cdef double[::1] db
    cdef double[:, ::1] dx
    cdef int i, j
    if batch == 0:
        if want_params:
            dw_arr = np.zeros((fin, fout))
            db_arr = np.zeros(fout)
        if want_dx:
            dx_arr = np.empty((0, fin))
        return dw_arr, db_arr, dx_arr
    if want_params:
        dw_arr = np.empty((fin, fout))
        db_arr = np.zeros(fout)
        dw = dw_arr
        db = db_arr
        with nogil:
            _gemm_rm(1, 0, fin, fout, batch, 1.0, &x_in[0, 0], fin,
                     &delta[0, 0], fout, 0.0, &dw[0, 0], fout)
            for i in range(batch):
                for j in range(fout):
                    db[j] += delta[i, j]
    if want_dx:
        dx_arr = np.empty((batch, fin))
        dx = dx_arr
        with nogil:
            _gemm_rm(0, 1, batch, fin, fout, 1.0, &delta[0, 0], fout,
                     &w[0, 0], fout, 0.0, &dx[0, 0], fin)
    return dw_arr, db_arr, dx_arr


def adam_step(double[::1] p, double[::1] g, double[::1] m, double[::1] v,
              double lr, double beta1, double beta2, double eps,
              double bc1, double bc2):
    """One in-place Adam update on flat views; bc1/bc2 are 1 - beta^t."""
    cdef Py_ssize_t i, size = p.shape[0]
    with nogil:
        for i in range(size):
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
            p[i] -= lr * (m[i] / bc1) / (c_sqrt(v[i] / bc2) + eps)
