# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops for pair and point kernel sums.

Mirrors :mod:`fractalbem._pykernels`; mode codes are those of
:mod:`fractalbem.kernels`.
"""
import numpy as np

from libc.math cimport sqrt, sin, cos, log, pow, M_PI
from scipy.special.cython_special cimport j0, y0

NAME = "cython"

cdef double EULER = 0.57721566490153286060651209
cdef double SERIES_SWITCH = 1.0
cdef int SERIES_TERMS = 24


cdef inline double complex remainder_2d(double k, double r) noexcept nogil:
    cdef double z, q, term, harm, tot, jz
    cdef int m
    if r == 0.0:
        return 0.25j - (log(0.5 * k) + EULER) / (2.0 * M_PI)
    z = k * r
    if z < SERIES_SWITCH:
        q = 0.25 * z * z
        term = 1.0
        harm = 0.0
        tot = 0.0
        for m in range(1, SERIES_TERMS + 1):
            term = term * (-q) / (m * m)
            harm = harm + 1.0 / m
            tot = tot - harm * term
        jz = j0(z)
        return (0.25j * jz - (log(0.5 * k) + EULER) * jz / (2.0 * M_PI)
                + log(r) * (1.0 - jz) / (2.0 * M_PI) - 0.25 * (2.0 / M_PI) * tot)
    return 0.25j * (j0(z) + 1j * y0(z)) + log(r) / (2.0 * M_PI)


cdef inline double complex tail_3d(double k, double r) noexcept nogil:
    cdef double z
    cdef double complex term, acc, iz
    cdef int m
    if r == 0.0:
        return 0.0
    z = k * r
    if z < 0.5:
        iz = 1j * z
        term = iz * iz * iz / 6.0
        acc = term
        for m in range(4, 20):
            term = term * iz / m
            acc = acc + term
        return acc / (4.0 * M_PI * r)
    return (cos(z) - 1.0 + 0.5 * z * z + 1j * (sin(z) - z)) / (4.0 * M_PI * r)


cdef inline double complex kernel(int mode, double k, double r, double t) noexcept nogil:
    cdef double kr
    if mode == 0:
        if r == 0.0:
            return 0.0
        kr = k * r
        return (cos(kr) + 1j * sin(kr)) / (4.0 * M_PI * r)
    elif mode == 1:
        if r == 0.0:
            return 1j * k / (4.0 * M_PI)
        kr = k * r
        return (-2.0 * sin(0.5 * kr) ** 2 + 1j * sin(kr)) / (4.0 * M_PI * r)
    elif mode == 2:
        if r == 0.0:
            return 0.0
        return pow(r, -t)
    elif mode == 3:
        if r == 0.0:
            return 0.0
        return log(r)
    elif mode == 4:
        if r == 0.0:
            return 0.0
        kr = k * r
        return 0.25j * (j0(kr) + 1j * y0(kr))
    elif mode == 5:
        return remainder_2d(k, r)
    else:
        return tail_3d(k, r)


def pair_sums(nodes, weights, offsets, pi, pj, double k, int mode, double t=1.0):
    """For each pair ``(pi[q], pj[q])`` of node groups return ``sum_a sum_b w_a w_b K(|x_a - y_b|)``."""
    if mode < 0 or mode > 6:
        raise ValueError(f"unknown kernel mode {mode}")
    cdef double[:, ::1] X = np.ascontiguousarray(np.reshape(nodes, (np.shape(nodes)[0], -1)), dtype=float)
    cdef double[::1] W = np.ascontiguousarray(weights, dtype=float)
    cdef long long[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef long long[::1] I = np.ascontiguousarray(pi, dtype=np.int64)
    cdef long long[::1] J = np.ascontiguousarray(pj, dtype=np.int64)
    cdef Py_ssize_t K = I.shape[0]
    cdef int d = X.shape[1]
    out_arr = np.zeros(K, dtype=complex)
    cdef double complex[::1] out = out_arr
    cdef Py_ssize_t q, a, b, e
    cdef double r2, diff, wa
    cdef double complex acc, inner
    with nogil:
        for q in range(K):
            acc = 0.0
            for a in range(off[I[q]], off[I[q] + 1]):
                wa = W[a]
                inner = 0.0
                for b in range(off[J[q]], off[J[q] + 1]):
                    r2 = 0.0
                    for e in range(d):
                        diff = X[a, e] - X[b, e]
                        r2 = r2 + diff * diff
                    inner = inner + W[b] * kernel(mode, k, sqrt(r2), t)
                acc = acc + wa * inner
            out[q] = acc
    return out_arr


def point_sums(points, nodes, weights, double k, int mode):
    """``u_q = sum_p w_p K(|x_q - (y_p, 0)|)`` for points ``x_q`` in ``R^(n+1)``."""
    if mode not in (0, 4):
        raise ValueError("point sums support the full Helmholtz kernels only")
    cdef double[:, ::1] P = np.ascontiguousarray(points, dtype=float)
    cdef double[:, ::1] Y = np.ascontiguousarray(np.reshape(nodes, (np.shape(nodes)[0], -1)), dtype=float)
    cdef double complex[::1] W = np.ascontiguousarray(weights, dtype=complex)
    cdef Py_ssize_t Q = P.shape[0], NP = Y.shape[0], q, p
    cdef int n = Y.shape[1], e
    out_arr = np.zeros(Q, dtype=complex)
    cdef double complex[::1] out = out_arr
    cdef double r2, diff, h2
    cdef double complex acc
    with nogil:
        for q in range(Q):
            h2 = P[q, n] * P[q, n]
            acc = 0.0
            for p in range(NP):
                r2 = h2
                for e in range(n):
                    diff = P[q, e] - Y[p, e]
                    r2 = r2 + diff * diff
                acc = acc + W[p] * kernel(mode, k, sqrt(r2), 0.0)
            out[q] = acc
    return out_arr
