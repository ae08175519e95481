"""Numpy implementation of the dense-layer kernels.

Function-for-function mirror of the compiled module `_ckernels`;
`bicl.nets._backend` picks whichever of the two imports.  All arrays are
float64 and C-contiguous.
"""

from __future__ import annotations

import numpy as np

IDENTITY, RELU, TANH, SOFTMAX = 0, 1, 2, 3


def linear_act_forward(x, w, b, act):
    """act(x @ w + b) for a (batch, fan_in) slab; returns the post-activation."""
    z = x @ w
    z += b
    if act == RELU:
        np.maximum(z, 0.0, out=z)
    elif act == TANH:
        np.tanh(z, out=z)
    elif act == SOFTMAX:
        z -= z.max(axis=1, keepdims=True)
        np.exp(z, out=z)
        z /= z.sum(axis=1, keepdims=True)
    return z


def act_backward(g, a, act):
    """Map upstream grad wrt the post-activation a to grad wrt the pre-activation."""
    if act == RELU:
        return np.where(a > 0.0, g, 0.0)
    if act == TANH:
        return g * (1.0 - a * a)
    if act == SOFTMAX:
        dot = np.sum(g * a, axis=1, keepdims=True)
        return a * (g - dot)
    return g.copy()


def linear_backward(delta, x_in, w, want_dx, want_params):
    """Gradients of a dense layer given delta = dLoss/d(x_in @ w + b).

    Returns (dw, db, dx); entries not requested are None.
    """
    dw = db = dx = None
    if want_params:
        dw = x_in.T @ delta
        db = delta.sum(axis=0)
    if want_dx:
        dx = delta @ w.T
    return dw, db, dx


def adam_step(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """One in-place Adam update on flat views; bc1/bc2 are 1 - beta^t."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
