"""Chebyshev spectral graph convolution with hand-written gradients.

Features are vertex-major: ``(n, F)`` for one mesh or ``(n, B, F)`` for a
batch, so that the sparse Laplacian acts on a single ``(n, B*F)`` block.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh_core import ScaledLaplacian


@dataclass
class ChebConvLayer:
    theta: np.ndarray  # K x F_in x F_out
    bias: np.ndarray  # F_out

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.theta.ndim != 3 or self.theta.shape[0] < 1:
            raise ValueError(f"theta must be K x F_in x F_out with K >= 1, got {self.theta.shape}")
        if self.bias.shape != (self.theta.shape[2],):
            raise ValueError(f"bias must have length {self.theta.shape[2]}, got {self.bias.shape}")

    @property
    def k_order(self) -> int:
        return self.theta.shape[0]

    @property
    def f_in(self) -> int:
        return self.theta.shape[1]

    @property
    def f_out(self) -> int:
        return self.theta.shape[2]

    @classmethod
    def glorot(cls, k_order: int, f_in: int, f_out: int, rng: np.random.Generator) -> "ChebConvLayer":
        s = np.sqrt(6.0 / (k_order * f_in + f_out))
        return cls(rng.uniform(-s, s, size=(k_order, f_in, f_out)), np.zeros(f_out))


@dataclass
class ChebCache:
    basis: np.ndarray  # (n*B, K*F_in), columns grouped by k
    lt: ScaledLaplacian
    in_shape: tuple
    theta_shape: tuple


def _as_batch(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[:, None, :]
    if x.ndim == 3:
        return x
    raise ValueError(f"features must be (n, F) or (n, B, F), got {x.shape}")


def cheb_forward(lt: ScaledLaplacian, x, layer: ChebConvLayer):
    """y_j = sum_i g_{theta_ij}(L) x_i + bias_j via the Chebyshev recurrence."""
    xb = _as_batch(x)
    n, b, f_in = xb.shape
    if n != lt.matrix.shape[0]:
        raise ValueError(f"features have {n} rows but the Laplacian is {lt.matrix.shape[0]} x {lt.matrix.shape[0]}")
    if f_in != layer.f_in:
        raise ValueError(f"layer expects {layer.f_in} input features, got {f_in}")
    k_order = layer.k_order
    lmat = lt.matrix
    t_prev = xb.reshape(n, b * f_in)
    terms = [t_prev]
    if k_order > 1:
        t_cur = lmat @ t_prev
        terms.append(t_cur)
        for _ in range(2, k_order):
            t_prev, t_cur = t_cur, 2.0 * (lmat @ t_cur) - t_prev
            terms.append(t_cur)
    basis = np.concatenate([t.reshape(n * b, f_in) for t in terms], axis=1)
    y = basis @ layer.theta.reshape(k_order * f_in, layer.f_out) + layer.bias
    y = y.reshape(n, b, layer.f_out)
    if np.ndim(x) == 2:
        y = y[:, 0, :]
    return y, ChebCache(basis, lt, np.shape(x), layer.theta.shape)


def cheb_backward(cache: ChebCache, grad_y, layer: ChebConvLayer):
    """Returns ``(grad_x, grad_theta, grad_bias)``."""
    if cache.theta_shape != layer.theta.shape:
        raise ValueError("cache was produced by a layer of a different shape")
    k_order, f_in, f_out = layer.theta.shape
    gy = _as_batch(grad_y)
    n, b, _ = gy.shape
    if cache.basis.shape[0] != n * b or gy.shape[2] != f_out:
        raise ValueError("gradient does not match the cached forward pass")
    gy2 = gy.reshape(n * b, f_out)
    grad_theta = (cache.basis.T @ gy2).reshape(k_order, f_in, f_out)
    grad_bias = gy2.sum(axis=0)

    # gradient w.r.t. each basis term, then back through the recurrence
    g_terms = (gy2 @ layer.theta.reshape(k_order * f_in, f_out).T).reshape(n, b, k_order, f_in)
    g = [np.ascontiguousarray(g_terms[:, :, k, :]).reshape(n, b * f_in) for k in range(k_order)]
    lmat_t = cache.lt.matrix.T  # symmetric in practice
    for k in range(k_order - 1, 1, -1):
        g[k - 1] = g[k - 1] + 2.0 * (lmat_t @ g[k])
        g[k - 2] = g[k - 2] - g[k]
    if k_order > 1:
        g[0] = g[0] + lmat_t @ g[1]
    grad_x = g[0].reshape(n, b, f_in)
    if len(cache.in_shape) == 2:
        grad_x = grad_x[:, 0, :]
    return grad_x, grad_theta, grad_bias


def relu_forward(x):
    x = np.asarray(x, dtype=np.float64)
    mask = x > 0
    return np.where(mask, x, 0.0), mask


def relu_backward(mask, grad_y):
    return np.where(mask, grad_y, 0.0)


# names used in the layer tables: activations follow biased pre-activations
bias_relu_forward = relu_forward
bias_relu_backward = relu_backward
