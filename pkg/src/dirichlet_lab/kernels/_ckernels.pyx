# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled bracket and convolution loops (same contracts as _numpy_kernels)."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def ucp_terminal(X, Y, Py_ssize_t m, Py_ssize_t k):
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] y = np.ascontiguousarray(Y, dtype=np.float64)
    cdef Py_ssize_t P = x.shape[0], p, j, a
    out = np.zeros(P)
    cdef double[::1] o = out
    cdef double acc
    if k <= 0:
        return out
    for p in range(P):
        acc = 0.0
        for j in range(k):
            a = j + m
            if a > k:
                a = k
            acc += (x[p, a] - x[p, j]) * (y[p, a] - y[p, j])
        o[p] = acc
    return out


def ceps_terminal(X, Y, Py_ssize_t m, Py_ssize_t k):
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] y = np.ascontiguousarray(Y, dtype=np.float64)
    cdef Py_ssize_t P = x.shape[0], n = x.shape[1] - 1, p, j, a
    out = np.zeros(P)
    cdef double[::1] o = out
    cdef double acc
    if k <= 0:
        return out
    for p in range(P):
        acc = 0.0
        for j in range(k):
            a = j + m
            if a > n:
                a = n
            acc += (x[p, a] - x[p, j]) * (y[p, a] - y[p, j])
        o[p] = acc
    return out


def ucp_path(X, Y, Py_ssize_t m):
    """Running clamped bracket at every k, single pass with window sums."""
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] y = np.ascontiguousarray(Y, dtype=np.float64)
    cdef Py_ssize_t P = x.shape[0], N = x.shape[1], p, k, j
    out = np.zeros((P, N))
    cdef double[:, ::1] o = out
    cdef double full, sx, sy, sxy, xk, yk
    cdef Py_ssize_t cnt
    for p in range(P):
        full = 0.0
        sx = 0.0
        sy = 0.0
        sxy = 0.0
        cnt = 0
        for k in range(1, N):
            # window now holds j in [max(k-m+1,0), k-1]: add j = k-1, drop j = k-m
            j = k - 1
            sx += x[p, j]
            sy += y[p, j]
            sxy += x[p, j] * y[p, j]
            cnt += 1
            j = k - m
            if j >= 0:
                full += (x[p, k] - x[p, j]) * (y[p, k] - y[p, j])
                sx -= x[p, j]
                sy -= y[p, j]
                sxy -= x[p, j] * y[p, j]
                cnt -= 1
            xk = x[p, k]
            yk = y[p, k]
            o[p, k] = full + cnt * xk * yk - xk * sy - yk * sx + sxy
    return out


def causal_convolution(B, dW):
    cdef const double[:, ::1] b = np.ascontiguousarray(B, dtype=np.float64)
    cdef const double[:, ::1] w = np.ascontiguousarray(dW, dtype=np.float64)
    cdef Py_ssize_t P = w.shape[0], n = w.shape[1], p, i, l
    out = np.zeros((P, n + 1))
    cdef double[:, ::1] o = out
    cdef double wi
    # scatter form: both inner operands are read forward
    for p in range(P):
        for i in range(n):
            wi = w[p, i]
            for l in range(1, n + 1 - i):
                o[p, i + l] += b[p, l] * wi
    return out
