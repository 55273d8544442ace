# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, sqrt, fabs, isfinite

cnp.import_array()

cdef double HALF_LOG_2PI = 0.91893853320467274178


def mixture_logpdf_grad(theta, double lam, double sigma0, double sigma1):
    cdef const double[::1] t = np.ascontiguousarray(theta, dtype=np.float64).ravel()
    cdef Py_ssize_t n = t.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] g = out
    cdef double c0 = log1p(-lam) - log(sigma0) - HALF_LOG_2PI
    cdef double c1 = log(lam) - log(sigma1) - HALF_LOG_2PI
    cdef double iv0 = 1.0 / (sigma0 * sigma0), iv1 = 1.0 / (sigma1 * sigma1)
    cdef double total = 0.0, x, l0, l1, m, lse, r0, r1
    with nogil:
        for i in range(n):
            x = t[i]
            l0 = c0 - 0.5 * x * x * iv0
            l1 = c1 - 0.5 * x * x * iv1
            m = l0 if l0 > l1 else l1
            lse = m + log1p(exp(-fabs(l0 - l1)))
            r0 = exp(l0 - lse)
            r1 = exp(l1 - lse)
            g[i] = -x * (r0 * iv0 + r1 * iv1)
            total += lse
    return total, out.reshape(np.shape(theta))


def slab_mask(theta, double lam, double sigma0, double sigma1):
    cdef const double[::1] t = np.ascontiguousarray(theta, dtype=np.float64).ravel()
    cdef Py_ssize_t n = t.shape[0], i
    out = np.empty(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] keep = out
    cdef double c0 = log1p(-lam) - log(sigma0) - HALF_LOG_2PI
    cdef double c1 = log(lam) - log(sigma1) - HALF_LOG_2PI
    cdef double iv0 = 1.0 / (sigma0 * sigma0), iv1 = 1.0 / (sigma1 * sigma1)
    cdef double x
    with nogil:
        for i in range(n):
            x = t[i]
            keep[i] = (c1 - 0.5 * x * x * iv1) >= (c0 - 0.5 * x * x * iv0)
    return out.view(np.bool_).reshape(np.shape(theta))


def sghmc_update(double[:, ::1] Z, double[:, ::1] v, grad, noise, rows,
                 double eps, double eta, bint leapfrog):
    cdef const double[:, ::1] g = np.ascontiguousarray(grad, dtype=np.float64)
    cdef const double[:, ::1] e = np.ascontiguousarray(noise, dtype=np.float64)
    cdef const cnp.intp_t[::1] r = np.ascontiguousarray(rows, dtype=np.intp)
    cdef Py_ssize_t m = r.shape[0], d = Z.shape[1], i, j, row
    cdef double decay = 1.0 - eps * eta, scale = sqrt(2.0 * eps * eta)
    cdef double vo, vn
    cdef bint ok = True
    with nogil:
        for i in range(m):
            row = r[i]
            for j in range(d):
                vo = v[row, j]
                vn = decay * vo + eps * g[i, j] + scale * e[i, j]
                v[row, j] = vn
                if leapfrog:
                    Z[row, j] = Z[row, j] + eps * vn
                else:
                    Z[row, j] = Z[row, j] + eps * vo
                if not (isfinite(vn) and isfinite(Z[row, j])):
                    ok = False
    return ok


def tanh_backward(delta, activation):
    cdef const double[:, ::1] dl = np.ascontiguousarray(delta, dtype=np.float64)
    cdef const double[:, ::1] a = np.ascontiguousarray(activation, dtype=np.float64)
    cdef Py_ssize_t n = dl.shape[0], k = dl.shape[1], i, j
    out = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(k):
                o[i, j] = dl[i, j] * (1.0 - a[i, j] * a[i, j])
    return out
