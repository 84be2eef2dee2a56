# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: masked row softmax, layer norm, LCS.

Signatures and results mirror ``fusecore._pykernels`` exactly; the pure
Python module is the reference and the fallback.
"""
import numpy as np

from libc.math cimport exp, sqrt, INFINITY


def softmax_rows_fwd(const double[:, ::1] x, const unsigned char[:, ::1] mask=None):
    cdef Py_ssize_t rows = x.shape[0], cols = x.shape[1]
    cdef Py_ssize_t i, j, mi, period = 1
    cdef bint masked = mask is not None
    cdef double mx, s, e, inv
    out = np.zeros((rows, cols), dtype=np.float64)
    cdef double[:, ::1] y = out
    if masked:
        period = mask.shape[0]
    for i in range(rows):
        mi = i % period
        mx = -INFINITY
        for j in range(cols):
            if (not masked or mask[mi, j]) and x[i, j] > mx:
                mx = x[i, j]
        if mx == -INFINITY:
            continue
        s = 0.0
        for j in range(cols):
            if not masked or mask[mi, j]:
                e = exp(x[i, j] - mx)
                y[i, j] = e
                s += e
        inv = 1.0 / s
        for j in range(cols):
            y[i, j] *= inv
    return out


def softmax_rows_bwd(const double[:, ::1] y, const double[:, ::1] gy):
    cdef Py_ssize_t rows = y.shape[0], cols = y.shape[1], i, j
    cdef double dot
    out = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] gx = out
    for i in range(rows):
        dot = 0.0
        for j in range(cols):
            dot += y[i, j] * gy[i, j]
        for j in range(cols):
            gx[i, j] = y[i, j] * (gy[i, j] - dot)
    return out


def layer_norm_fwd(const double[:, ::1] x, const double[::1] gain,
                   const double[::1] bias, double eps):
    cdef Py_ssize_t rows = x.shape[0], d = x.shape[1], i, j
    cdef double mean, var, r, c
    y_arr = np.empty((rows, d), dtype=np.float64)
    xhat_arr = np.empty((rows, d), dtype=np.float64)
    rstd_arr = np.empty(rows, dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] rstd = rstd_arr
    for i in range(rows):
        mean = 0.0
        for j in range(d):
            mean += x[i, j]
        mean /= d
        var = 0.0
        for j in range(d):
            c = x[i, j] - mean
            var += c * c
        var /= d
        r = 1.0 / sqrt(var + eps)
        rstd[i] = r
        for j in range(d):
            c = (x[i, j] - mean) * r
            xhat[i, j] = c
            y[i, j] = c * gain[j] + bias[j]
    return y_arr, xhat_arr, rstd_arr


def layer_norm_bwd(const double[:, ::1] gy, const double[:, ::1] xhat,
                   const double[::1] rstd, const double[::1] gain):
    cdef Py_ssize_t rows = gy.shape[0], d = gy.shape[1], i, j
    cdef double mg, mgx, g
    gx_arr = np.empty((rows, d), dtype=np.float64)
    ggain_arr = np.zeros(d, dtype=np.float64)
    gbias_arr = np.zeros(d, dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef double[::1] ggain = ggain_arr
    cdef double[::1] gbias = gbias_arr
    for i in range(rows):
        mg = 0.0
        mgx = 0.0
        for j in range(d):
            g = gy[i, j] * gain[j]
            mg += g
            mgx += g * xhat[i, j]
            ggain[j] += gy[i, j] * xhat[i, j]
            gbias[j] += gy[i, j]
        mg /= d
        mgx /= d
        for j in range(d):
            gx[i, j] = rstd[i] * (gy[i, j] * gain[j] - mg - xhat[i, j] * mgx)
    return gx_arr, ggain_arr, gbias_arr


def lcs_length(a, b):
    cdef Py_ssize_t n = len(a), m = len(b), i, j
    if n == 0 or m == 0:
        return 0
    cdef long[::1] sa = np.asarray(a, dtype=np.int64)
    cdef long[::1] sb = np.asarray(b, dtype=np.int64)
    prev_arr = np.zeros(m + 1, dtype=np.int64)
    cur_arr = np.zeros(m + 1, dtype=np.int64)
    cdef long[::1] prev = prev_arr
    cdef long[::1] cur = cur_arr
    cdef long[::1] tmp
    for i in range(1, n + 1):
        cur[0] = 0
        for j in range(1, m + 1):
            if sa[i - 1] == sb[j - 1]:
                cur[j] = prev[j - 1] + 1
            elif prev[j] >= cur[j - 1]:
                cur[j] = prev[j]
            else:
                cur[j] = cur[j - 1]
        tmp = prev
        prev = cur
        cur = tmp
    return int(prev[m])
