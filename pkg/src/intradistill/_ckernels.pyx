# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_kernels_py``."""
import numpy as np
from libc.math cimport exp, log


def log_softmax(const double[:, ::1] x):
    cdef Py_ssize_t r, c, rows = x.shape[0], cols = x.shape[1]
    out_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double m, s
    for r in range(rows):
        m = x[r, 0]
        for c in range(1, cols):
            if x[r, c] > m:
                m = x[r, c]
        s = 0.0
        for c in range(cols):
            s += exp(x[r, c] - m)
        s = log(s)
        for c in range(cols):
            out[r, c] = x[r, c] - m - s
    return out_arr


def log_softmax_backward(const double[:, ::1] out, const double[:, ::1] grad):
    cdef Py_ssize_t r, c, rows = out.shape[0], cols = out.shape[1]
    res_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] res = res_arr
    cdef double s
    for r in range(rows):
        s = 0.0
        for c in range(cols):
            s += grad[r, c]
        for c in range(cols):
            res[r, c] = grad[r, c] - exp(out[r, c]) * s
    return res_arr


cdef inline double _clog(double v, double eps) nogil:
    return log(v if v > eps else eps)


def x_divergence(const double[:, :, ::1] p, double eps):
    cdef Py_ssize_t i, r, c, k = p.shape[0], rows = p.shape[1], cols = p.shape[2]
    grad_arr = np.empty((k, rows, cols), dtype=np.float64)
    cdef double[:, :, ::1] grad = grad_arr
    cdef double pbar, lbar, mean_ell, v, ell, total = 0.0
    cdef double norm = 1.0 / (k * rows)
    for r in range(rows):
        for c in range(cols):
            pbar = 0.0
            mean_ell = 0.0
            for i in range(k):
                pbar += p[i, r, c]
                mean_ell += _clog(p[i, r, c], eps)
            pbar /= k
            mean_ell /= k
            lbar = _clog(pbar, eps)
            for i in range(k):
                v = p[i, r, c]
                ell = _clog(v, eps)
                total += (v - pbar) * (ell - lbar)
                if v > eps:
                    grad[i, r, c] = (ell - mean_ell + (v - pbar) / v) * norm
                else:
                    grad[i, r, c] = (ell - mean_ell) * norm
    return total * norm, grad_arr


def js_divergence(const double[:, :, ::1] p, double eps):
    cdef Py_ssize_t i, r, c, k = p.shape[0], rows = p.shape[1], cols = p.shape[2]
    grad_arr = np.empty((k, rows, cols), dtype=np.float64)
    cdef double[:, :, ::1] grad = grad_arr
    cdef double pbar, lbar, v, ell, live_bar, total = 0.0
    cdef double norm = 1.0 / (k * rows)
    for r in range(rows):
        for c in range(cols):
            pbar = 0.0
            for i in range(k):
                pbar += p[i, r, c]
            pbar /= k
            lbar = _clog(pbar, eps)
            live_bar = 1.0 if pbar > eps else 0.0
            for i in range(k):
                v = p[i, r, c]
                ell = _clog(v, eps)
                total += v * (ell - lbar)
                grad[i, r, c] = (ell - lbar + (1.0 if v > eps else 0.0) - live_bar) * norm
    return total * norm, grad_arr


def reverse_half(const double[:, :, ::1] p, double eps):
    cdef Py_ssize_t i, r, c, k = p.shape[0], rows = p.shape[1], cols = p.shape[2]
    cdef double pbar, lbar, total = 0.0
    for r in range(rows):
        for c in range(cols):
            pbar = 0.0
            for i in range(k):
                pbar += p[i, r, c]
            pbar /= k
            lbar = _clog(pbar, eps)
            for i in range(k):
                total += pbar * (lbar - _clog(p[i, r, c], eps))
    return total / (k * rows)


def pairwise_kl_sum(const double[:, :, ::1] p, double eps):
    cdef Py_ssize_t i, r, c, k = p.shape[0], rows = p.shape[1], cols = p.shape[2]
    cdef double sp, sl, spl, ell, total = 0.0
    for r in range(rows):
        for c in range(cols):
            sp = 0.0
            sl = 0.0
            spl = 0.0
            for i in range(k):
                ell = _clog(p[i, r, c], eps)
                sp += p[i, r, c]
                sl += ell
                spl += p[i, r, c] * ell
            total += k * spl - sp * sl
    return total / rows
