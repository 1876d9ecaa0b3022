# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implementations of the hot kernels.

Mirrors ``_fallback.py``; keep the two in lockstep.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport erfc, log, sqrt, M_PI, M_SQRT1_2

cnp.import_array()

cdef double LOG_2PI = log(2.0 * M_PI)


cdef inline double _ndtr(double z) nogil:
    return 0.5 * erfc(-z * M_SQRT1_2)


def cs_logpdf_many(diffs, sigma2, rho):
    """Log density of m compound-symmetry MVN residual vectors.

    See the fallback docstring for the contract.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=2] d = np.ascontiguousarray(diffs, dtype=np.float64)
    cdef Py_ssize_t m = d.shape[0]
    cdef Py_ssize_t n = d.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] s2 = np.ascontiguousarray(
        np.broadcast_to(np.asarray(sigma2, dtype=np.float64), (m,)))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] r = np.ascontiguousarray(
        np.broadcast_to(np.asarray(rho, dtype=np.float64), (m,)))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(m, dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double s, qq, v, var1, var2, s2n, quad, logdet
    for i in range(m):
        s = 0.0
        qq = 0.0
        for j in range(n):
            v = d[i, j]
            s += v
            qq += v * v
        var1 = s2[i] * (1.0 + (n - 1) * r[i])
        var2 = s2[i] * (1.0 - r[i])
        s2n = s * s / n
        quad = s2n / var1
        logdet = log(var1)
        if n > 1:
            quad += (qq - s2n) / var2
            logdet += (n - 1) * log(var2)
        out[i] = -0.5 * (n * LOG_2PI + logdet + quad)
    return out


def cell_masses(weights, mean_x, sd_x, mean_y, sd_y, x_edges, y_edges):
    """Weighted sum of per-component product-normal rectangle masses.

    See the fallback docstring for the contract.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] mx = np.ascontiguousarray(mean_x, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sx = np.ascontiguousarray(sd_x, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] my = np.ascontiguousarray(mean_y, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sy = np.ascontiguousarray(sd_y, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xe = np.ascontiguousarray(x_edges, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ye = np.ascontiguousarray(y_edges, dtype=np.float64)
    cdef Py_ssize_t m = w.shape[0]
    cdef Py_ssize_t nx = xe.shape[0] - 1
    cdef Py_ssize_t ny = ye.shape[0] - 1
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((nx, ny), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cdf_x = np.empty(nx + 1, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cdf_y = np.empty(ny + 1, dtype=np.float64)
    cdef Py_ssize_t k, i, j
    cdef double wk, dxi
    for k in range(m):
        wk = w[k]
        for i in range(nx + 1):
            cdf_x[i] = _ndtr((xe[i] - mx[k]) / sx[k])
        for j in range(ny + 1):
            cdf_y[j] = _ndtr((ye[j] - my[k]) / sy[k])
        for i in range(nx):
            dxi = wk * (cdf_x[i + 1] - cdf_x[i])
            for j in range(ny):
                out[i, j] += dxi * (cdf_y[j + 1] - cdf_y[j])
    return out
