# cython: boundscheck=False, wraparound=False, cdivision=True
"""Native kernels: single-pass fused loops for the memory-bound inner ops.

The matrix products themselves stay in BLAS (via NumPy) on both backends;
what lives here is the packing/scatter and elementwise fusion around them.
"""

import numpy as np

from libc.math cimport exp, expm1, sqrt

BACKEND = "native"


def im2col1d(float[:, :, ::1] xp, int k):
    cdef Py_ssize_t b = xp.shape[0], tp = xp.shape[1], c = xp.shape[2]
    cdef Py_ssize_t t = tp - k + 1
    out_arr = np.empty((b, t, k * c), dtype=np.float32)
    cdef float[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, tt, cc
    for i in range(b):
        for tt in range(t):
            for j in range(k):
                for cc in range(c):
                    out[i, tt, j * c + cc] = xp[i, tt + j, cc]
    return out_arr


def col2im1d(float[:, :, ::1] dcol, int k, int tp):
    cdef Py_ssize_t b = dcol.shape[0], t = dcol.shape[1]
    cdef Py_ssize_t c = dcol.shape[2] // k
    dxp_arr = np.zeros((b, tp, c), dtype=np.float32)
    cdef float[:, :, ::1] dxp = dxp_arr
    cdef Py_ssize_t i, j, tt, cc
    for i in range(b):
        for tt in range(t):
            for j in range(k):
                for cc in range(c):
                    dxp[i, tt + j, cc] += dcol[i, tt, j * c + cc]
    return dxp_arr


def glu_forward(z):
    width = z.shape[z.ndim - 1]
    z2 = np.ascontiguousarray(z.reshape(-1, width), dtype=np.float32)
    cdef float[:, ::1] zv = z2
    cdef Py_ssize_t n = zv.shape[0], c = zv.shape[1] // 2
    out_arr = np.empty((n, c), dtype=np.float32)
    sig_arr = np.empty((n, c), dtype=np.float32)
    cdef float[:, ::1] out = out_arr, sig = sig_arr
    cdef Py_ssize_t i, j
    cdef float s
    for i in range(n):
        for j in range(c):
            s = 1.0 / (1.0 + exp(-zv[i, c + j]))
            sig[i, j] = s
            out[i, j] = zv[i, j] * s
    shape = tuple(z.shape)[: z.ndim - 1] + (c,)
    return out_arr.reshape(shape), sig_arr.reshape(shape)


def glu_backward(dy, z, sig):
    width = z.shape[z.ndim - 1]
    c = width // 2
    z2 = np.ascontiguousarray(z.reshape(-1, width), dtype=np.float32)
    dy2 = np.ascontiguousarray(dy.reshape(-1, c), dtype=np.float32)
    sig2 = np.ascontiguousarray(sig.reshape(-1, c), dtype=np.float32)
    cdef float[:, ::1] zv = z2, dyv = dy2, sv = sig2
    cdef Py_ssize_t n = zv.shape[0], cc = c
    dz_arr = np.empty((n, 2 * cc), dtype=np.float32)
    cdef float[:, ::1] dz = dz_arr
    cdef Py_ssize_t i, j
    cdef float s, d
    for i in range(n):
        for j in range(cc):
            s = sv[i, j]
            d = dyv[i, j]
            dz[i, j] = d * s
            dz[i, cc + j] = d * zv[i, j] * s * (1.0 - s)
    return dz_arr.reshape(z.shape)


def elu_forward(x):
    x2 = np.ascontiguousarray(x.reshape(-1), dtype=np.float32)
    cdef float[::1] xv = x2
    cdef Py_ssize_t n = xv.shape[0]
    y_arr = np.empty(n, dtype=np.float32)
    cdef float[::1] y = y_arr
    cdef Py_ssize_t i
    for i in range(n):
        y[i] = xv[i] if xv[i] >= 0 else <float>expm1(xv[i])
    return y_arr.reshape(x.shape)


def elu_backward(dy, y, x):
    dy2 = np.ascontiguousarray(dy.reshape(-1), dtype=np.float32)
    y2 = np.ascontiguousarray(y.reshape(-1), dtype=np.float32)
    x2 = np.ascontiguousarray(x.reshape(-1), dtype=np.float32)
    cdef float[::1] dyv = dy2, yv = y2, xv = x2
    cdef Py_ssize_t n = dyv.shape[0]
    dx_arr = np.empty(n, dtype=np.float32)
    cdef float[::1] dx = dx_arr
    cdef Py_ssize_t i
    for i in range(n):
        dx[i] = dyv[i] if xv[i] >= 0 else dyv[i] * (yv[i] + 1.0)
    return dx_arr.reshape(x.shape)


def adam_step(p, g, m, v, double lr, double beta1, double beta2,
              double eps, double bc1, double bc2):
    cdef float[::1] pv = p.reshape(-1), gv = np.ascontiguousarray(g.reshape(-1), dtype=np.float32)
    cdef float[::1] mv = m.reshape(-1), vv = v.reshape(-1)
    cdef Py_ssize_t n = pv.shape[0]
    cdef Py_ssize_t i
    cdef double mi, vi
    for i in range(n):
        mi = beta1 * mv[i] + (1.0 - beta1) * gv[i]
        vi = beta2 * vv[i] + (1.0 - beta2) * gv[i] * gv[i]
        mv[i] = <float>mi
        vv[i] = <float>vi
        pv[i] -= <float>(lr * (mi / bc1) / (sqrt(vi / bc2) + eps))


def overlap_add(double[:, ::1] frames, int hop, int n):
    cdef Py_ssize_t t = frames.shape[0], win = frames.shape[1]
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(t):
        for j in range(win):
            out[i * hop + j] += frames[i, j]
    return out_arr
