# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled resolvent-sum kernels; same contracts as ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, INFINITY

cnp.import_array()


cdef inline double complex _term(const double complex[:] energies_t, const long[:] slots_t,
                                 const double[:] z, Py_ssize_t ngap) noexcept nogil:
    cdef double flow = 0.0
    cdef double complex prod = 1.0
    cdef double complex d
    cdef Py_ssize_t g
    for g in range(ngap):
        flow += z[slots_t[g]]
        d = flow - energies_t[g]
        prod = prod * (1j / d)
    return prod


def term_values(coeffs, slots, energies, z):
    cdef const double complex[:] c = np.ascontiguousarray(coeffs, dtype=np.complex128)
    cdef const long[:, :] s = np.ascontiguousarray(slots, dtype=np.int_)
    cdef const double complex[:, :] e = np.ascontiguousarray(energies, dtype=np.complex128)
    cdef const double[:] zz = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t nt = s.shape[0], ngap = e.shape[1], t
    out = np.empty(nt, dtype=np.complex128)
    cdef double complex[:] o = out
    with nogil:
        for t in range(nt):
            o[t] = c[t] * _term(e[t], s[t], zz, ngap)
    return out


def resolvent_sum(coeffs, slots, energies, zs):
    cdef const double complex[:] c = np.ascontiguousarray(coeffs, dtype=np.complex128)
    cdef const long[:, :] s = np.ascontiguousarray(slots, dtype=np.int_)
    cdef const double complex[:, :] e = np.ascontiguousarray(energies, dtype=np.complex128)
    cdef const double[:, :] z = np.ascontiguousarray(np.atleast_2d(zs), dtype=np.float64)
    cdef Py_ssize_t nt = s.shape[0], ngap = e.shape[1], npt = z.shape[0], t, m
    cdef double complex acc
    out = np.empty(npt, dtype=np.complex128)
    cdef double complex[:] o = out
    with nogil:
        for m in range(npt):
            acc = 0.0
            for t in range(nt):
                acc = acc + c[t] * _term(e[t], s[t], z[m], ngap)
            o[m] = acc
    return out


def min_real_gap(slots, energies, real_mask, zs):
    cdef const long[:, :] s = np.ascontiguousarray(slots, dtype=np.int_)
    cdef const double complex[:, :] e = np.ascontiguousarray(energies, dtype=np.complex128)
    cdef const cnp.npy_bool[:, :] r = np.ascontiguousarray(real_mask, dtype=np.bool_)
    cdef const double[:, :] z = np.ascontiguousarray(np.atleast_2d(zs), dtype=np.float64)
    cdef Py_ssize_t nt = s.shape[0], ngap = e.shape[1], npt = z.shape[0], t, m, g
    cdef double flow, best, d
    out = np.empty(npt, dtype=np.float64)
    cdef double[:] o = out
    with nogil:
        for m in range(npt):
            best = INFINITY
            for t in range(nt):
                flow = 0.0
                for g in range(ngap):
                    flow += z[m, s[t, g]]
                    if r[t, g]:
                        d = fabs(flow - e[t, g].real)
                        if d < best:
                            best = d
            o[m] = best
    return out
