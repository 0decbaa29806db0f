# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled 1-D convolution kernels (hot inner loops of training)."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def conv1d_fwd(cnp.ndarray[double, ndim=2] x_in, cnp.ndarray[double, ndim=3] w_in,
               int stride, int padding):
    cdef cnp.ndarray[double, ndim=2] x = np.pad(x_in, ((0, 0), (padding, padding))) \
        if padding else np.ascontiguousarray(x_in)
    cdef cnp.ndarray[double, ndim=3] w = np.ascontiguousarray(w_in)
    cdef Py_ssize_t cin = x.shape[0], t = x.shape[1]
    cdef Py_ssize_t cout = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t t_out = (t - k) // stride + 1
    cdef cnp.ndarray[double, ndim=2] y = np.zeros((cout, t_out))
    cdef Py_ssize_t o, i, kk, tt, base
    cdef double acc
    with nogil:
        for o in range(cout):
            for tt in range(t_out):
                base = tt * stride
                acc = 0.0
                for i in range(cin):
                    for kk in range(k):
                        acc += w[o, i, kk] * x[i, base + kk]
                y[o, tt] = acc
    return y


def conv1d_bwd_x(cnp.ndarray[double, ndim=2] gy_in, cnp.ndarray[double, ndim=3] w_in,
                 int stride, int padding, Py_ssize_t t_in):
    cdef cnp.ndarray[double, ndim=2] gy = np.ascontiguousarray(gy_in)
    cdef cnp.ndarray[double, ndim=3] w = np.ascontiguousarray(w_in)
    cdef Py_ssize_t cout = gy.shape[0], t_out = gy.shape[1]
    cdef Py_ssize_t cin = w.shape[1], k = w.shape[2]
    cdef cnp.ndarray[double, ndim=2] gx = np.zeros((cin, t_in + 2 * padding))
    cdef Py_ssize_t o, i, kk, tt, base
    with nogil:
        for o in range(cout):
            for tt in range(t_out):
                base = tt * stride
                for i in range(cin):
                    for kk in range(k):
                        gx[i, base + kk] += w[o, i, kk] * gy[o, tt]
    if padding:
        gx = np.ascontiguousarray(gx[:, padding:padding + t_in])
    return gx


def conv1d_bwd_w(cnp.ndarray[double, ndim=2] gy_in, cnp.ndarray[double, ndim=2] x_in,
                 int stride, int padding, Py_ssize_t k):
    cdef cnp.ndarray[double, ndim=2] gy = np.ascontiguousarray(gy_in)
    cdef cnp.ndarray[double, ndim=2] x = np.pad(x_in, ((0, 0), (padding, padding))) \
        if padding else np.ascontiguousarray(x_in)
    cdef Py_ssize_t cout = gy.shape[0], t_out = gy.shape[1]
    cdef Py_ssize_t cin = x.shape[0]
    cdef cnp.ndarray[double, ndim=3] gw = np.zeros((cout, cin, k))
    cdef Py_ssize_t o, i, kk, tt, base
    cdef double g
    with nogil:
        for o in range(cout):
            for tt in range(t_out):
                g = gy[o, tt]
                base = tt * stride
                for i in range(cin):
                    for kk in range(k):
                        gw[o, i, kk] += g * x[i, base + kk]
    return gw
