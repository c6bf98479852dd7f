# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: counter-based draws and the masked affine layer.

Must stay numerically interchangeable with ``_pykernels``: integer draws are
bit-identical, floating outputs agree to rounding.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport log, cos, sqrt, tanh
from libc.stdint cimport uint64_t

cnp.import_array()

cdef uint64_t GAMMA = 0x9E3779B97F4A7C15ULL
cdef double TWO_PI = 6.283185307179586
cdef double INV_2_53 = 1.0 / 9007199254740992.0

BACKEND = "cython"


cdef inline uint64_t _mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _unit(uint64_t key, uint64_t counter) noexcept nogil:
    return <double>(_mix64(key + (counter + 1) * GAMMA) >> 11) * INV_2_53


def uniform_grid(const uint64_t[::1] keys, uint64_t start, Py_ssize_t d):
    cdef Py_ssize_t n = keys.shape[0], i, j
    out = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef uint64_t k
    with nogil:
        for i in range(n):
            k = keys[i]
            for j in range(d):
                o[i, j] = _unit(k, start + <uint64_t>j)
    return out


def normal_grid(const uint64_t[::1] keys, uint64_t start, Py_ssize_t d):
    cdef Py_ssize_t n = keys.shape[0], i, j
    out = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef uint64_t k, c
    cdef double u1, u2
    with nogil:
        for i in range(n):
            k = keys[i]
            for j in range(d):
                c = start + 2 * <uint64_t>j
                u1 = _unit(k, c)
                u2 = _unit(k, c + 1)
                o[i, j] = sqrt(-2.0 * log(1.0 - u1)) * cos(TWO_PI * u2)
    return out


def masked_layer(const double[:, ::1] h, const double[:, ::1] z,
                 const double[:, ::1] w, const double[::1] b,
                 int act, double scale):
    cdef Py_ssize_t rows = h.shape[0], kin = h.shape[1], kout = w.shape[1]
    cdef Py_ssize_t r, q, k
    cdef double hv, a
    cdef double* orow
    cdef const double* wrow
    out = np.empty((rows, kout), dtype=np.float64)
    cdef double[:, ::1] o = out
    if rows == 0 or kout == 0:
        return out
    with nogil:
        for r in range(rows):
            orow = &o[r, 0]
            for k in range(kout):
                orow[k] = b[k]
            for q in range(kin):
                hv = h[r, q] * z[r, q]
                if hv == 0.0:
                    continue
                wrow = &w[q, 0]
                for k in range(kout):
                    orow[k] += hv * wrow[k]
            for k in range(kout):
                a = orow[k]
                if act == 1:
                    a = a if a > 0.0 else 0.0
                elif act == 2:
                    a = tanh(a)
                orow[k] = a * scale
    return out
