# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the training hot loop.

Each function fuses a full row-wise pass that the numpy backend spreads over
several array operations; at the small matrix sizes this project runs at,
per-call dispatch overhead is the dominant cost, so fusing pays.

Matmul is deliberately NOT implemented here: BLAS already owns it in both
backends, which keeps MAC accounting and the heaviest compute identical
regardless of which backend is selected.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt, tanh

cnp.import_array()

name = "compiled"

cdef double SQRT_2_OVER_PI = 0.7978845608028654
cdef double GELU_CUBIC = 0.044715


def layernorm_fwd(double[:, ::1] x, double[::1] gamma, double[::1] beta, double eps):
    cdef Py_ssize_t r = x.shape[0], c = x.shape[1]
    y_arr = np.empty((r, c), dtype=np.float64)
    mean_arr = np.empty(r, dtype=np.float64)
    rstd_arr = np.empty(r, dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    cdef double[::1] mean = mean_arr
    cdef double[::1] rstd = rstd_arr
    cdef Py_ssize_t i, j
    cdef double mu, var, d, rs
    for i in range(r):
        mu = 0.0
        for j in range(c):
            mu += x[i, j]
        mu /= c
        var = 0.0
        for j in range(c):
            d = x[i, j] - mu
            var += d * d
        var /= c
        rs = 1.0 / sqrt(var + eps)
        mean[i] = mu
        rstd[i] = rs
        for j in range(c):
            y[i, j] = (x[i, j] - mu) * rs * gamma[j] + beta[j]
    return y_arr, mean_arr, rstd_arr


def layernorm_bwd(double[:, ::1] dy, double[:, ::1] x, double[::1] gamma,
                  double[::1] mean, double[::1] rstd):
    cdef Py_ssize_t r = x.shape[0], c = x.shape[1]
    dx_arr = np.empty((r, c), dtype=np.float64)
    dgamma_arr = np.zeros(c, dtype=np.float64)
    dbeta_arr = np.zeros(c, dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef double[::1] dgamma = dgamma_arr
    cdef double[::1] dbeta = dbeta_arr
    cdef Py_ssize_t i, j
    cdef double xhat, dxhat, m1, m2, mu, rs
    for i in range(r):
        mu = mean[i]
        rs = rstd[i]
        m1 = 0.0
        m2 = 0.0
        for j in range(c):
            xhat = (x[i, j] - mu) * rs
            dxhat = dy[i, j] * gamma[j]
            dgamma[j] += dy[i, j] * xhat
            dbeta[j] += dy[i, j]
            m1 += dxhat
            m2 += dxhat * xhat
        m1 /= c
        m2 /= c
        for j in range(c):
            xhat = (x[i, j] - mu) * rs
            dxhat = dy[i, j] * gamma[j]
            dx[i, j] = rs * (dxhat - m1 - xhat * m2)
    return dx_arr, dgamma_arr, dbeta_arr


def softmax_fwd(double[:, ::1] x):
    cdef Py_ssize_t r = x.shape[0], c = x.shape[1]
    y_arr = np.empty((r, c), dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    cdef Py_ssize_t i, j
    cdef double mx, total
    for i in range(r):
        mx = x[i, 0]
        for j in range(1, c):
            if x[i, j] > mx:
                mx = x[i, j]
        total = 0.0
        for j in range(c):
            y[i, j] = exp(x[i, j] - mx)
            total += y[i, j]
        for j in range(c):
            y[i, j] /= total
    return y_arr


def softmax_bwd(double[:, ::1] y, double[:, ::1] dy):
    cdef Py_ssize_t r = y.shape[0], c = y.shape[1]
    dx_arr = np.empty((r, c), dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef Py_ssize_t i, j
    cdef double inner
    for i in range(r):
        inner = 0.0
        for j in range(c):
            inner += y[i, j] * dy[i, j]
        for j in range(c):
            dx[i, j] = y[i, j] * (dy[i, j] - inner)
    return dx_arr


def gelu_fwd(double[:, ::1] x):
    cdef Py_ssize_t r = x.shape[0], c = x.shape[1]
    y_arr = np.empty((r, c), dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    cdef Py_ssize_t i, j
    cdef double v
    for i in range(r):
        for j in range(c):
            v = x[i, j]
            y[i, j] = 0.5 * v * (1.0 + tanh(SQRT_2_OVER_PI * (v + GELU_CUBIC * v * v * v)))
    return y_arr


def gelu_bwd(double[:, ::1] x, double[:, ::1] dy):
    cdef Py_ssize_t r = x.shape[0], c = x.shape[1]
    dx_arr = np.empty((r, c), dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef Py_ssize_t i, j
    cdef double v, t, sech2, local
    for i in range(r):
        for j in range(c):
            v = x[i, j]
            t = tanh(SQRT_2_OVER_PI * (v + GELU_CUBIC * v * v * v))
            sech2 = 1.0 - t * t
            local = 0.5 * (1.0 + t) + 0.5 * v * sech2 * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * v * v)
            dx[i, j] = dy[i, j] * local
    return dx_arr


def sigmoid_fwd(double[:, ::1] x):
    cdef Py_ssize_t r = x.shape[0], c = x.shape[1]
    y_arr = np.empty((r, c), dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    cdef Py_ssize_t i, j
    cdef double v, e
    for i in range(r):
        for j in range(c):
            v = x[i, j]
            if v >= 0.0:
                y[i, j] = 1.0 / (1.0 + exp(-v))
            else:
                e = exp(v)
                y[i, j] = e / (1.0 + e)
    return y_arr


def sigmoid_bwd(double[:, ::1] y, double[:, ::1] dy):
    cdef Py_ssize_t r = y.shape[0], c = y.shape[1]
    dx_arr = np.empty((r, c), dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef Py_ssize_t i, j
    for i in range(r):
        for j in range(c):
            dx[i, j] = dy[i, j] * y[i, j] * (1.0 - y[i, j])
    return dx_arr


def adam_step(double[::1] p, double[::1] g, double[::1] m, double[::1] v,
              double lr, double b1, double b2, double eps, long t):
    cdef Py_ssize_t n = p.shape[0]
    cdef double c1 = 1.0 - b1 ** t
    cdef double c2 = 1.0 - b2 ** t
    cdef Py_ssize_t i
    cdef double mi, vi
    for i in range(n):
        mi = b1 * m[i] + (1.0 - b1) * g[i]
        vi = b2 * v[i] + (1.0 - b2) * g[i] * g[i]
        m[i] = mi
        v[i] = vi
        p[i] -= lr * (mi / c1) / (sqrt(vi / c2) + eps)
