"""Pure-numpy convolution kernels (BLAS-backed matmul formulation)."""

from __future__ import annotations

import numpy as np


def conv1d_fwd(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """x (Cin, T), w (Cout, Cin, K) -> y (Cout, T') with
    y[o,t'] = sum_{i,k} w[o,i,k] * x_pad[i, t'*stride + k]."""
    cin, t = x.shape
    cout, _, k = w.shape
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding)))
    t_out = (x.shape[1] - k) // stride + 1
    y = np.zeros((cout, t_out))
    for kk in range(k):
        seg = x[:, kk:kk + stride * t_out:stride]
        # Contiguous weight slice keeps the matmul on the fast BLAS path.
        y += np.ascontiguousarray(w[:, :, kk]) @ seg
    return y


def conv1d_bwd_x(gy: np.ndarray, w: np.ndarray, stride: int, padding: int,
                 t_in: int) -> np.ndarray:
    """Gradient of conv1d_fwd w.r.t. x; gy (Cout, T'), returns (Cin, t_in)."""
    cout, t_out = gy.shape
    _, cin, k = w.shape
    gx = np.zeros((cin, t_in + 2 * padding))
    for kk in range(k):
        gx[:, kk:kk + stride * t_out:stride] += np.ascontiguousarray(w[:, :, kk]).T @ gy
    if padding:
        gx = gx[:, padding:padding + t_in]
    return gx


def conv1d_bwd_w(gy: np.ndarray, x: np.ndarray, stride: int, padding: int,
                 k: int) -> np.ndarray:
    """Gradient of conv1d_fwd w.r.t. w; returns (Cout, Cin, K)."""
    cout, t_out = gy.shape
    cin = x.shape[0]
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding)))
    gw = np.empty((cout, cin, k))
    for kk in range(k):
        seg = x[:, kk:kk + stride * t_out:stride]
        gw[:, :, kk] = gy @ seg.T
    return gw
