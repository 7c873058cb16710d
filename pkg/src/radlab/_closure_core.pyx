# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled batched closure kernel; same contract as ``_closure_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport pow

cnp.import_array()


cdef void _gs(const double[::1] x, const double[::1] ww, int n,
              double[:, ::1] vals, double[:, ::1] coef, double[::1] nrm,
              double[::1] v, double[::1] c) noexcept nogil:
    cdef int q = x.shape[0]
    cdef int j, k, l, sweep
    cdef double h, s
    for l in range(q):
        vals[0, l] = 1.0
    for l in range(n):
        for k in range(n):
            coef[l, k] = 0.0
    coef[0, 0] = 1.0
    s = 0.0
    for l in range(q):
        s += ww[l]
    nrm[0] = s
    for j in range(1, n):
        for l in range(q):
            v[l] = x[l] * vals[j - 1, l]
        c[0] = 0.0
        for l in range(1, n):
            c[l] = coef[j - 1, l - 1]
        for sweep in range(2):
            for k in range(j):
                s = 0.0
                for l in range(q):
                    s += ww[l] * v[l] * vals[k, l]
                h = s / nrm[k]
                for l in range(q):
                    v[l] -= h * vals[k, l]
                for l in range(n):
                    c[l] -= h * coef[k, l]
        c[j] = 1.0
        s = 0.0
        for l in range(q):
            vals[j, l] = v[l]
            s += ww[l] * v[l] * v[l]
        nrm[j] = s
        for l in range(n):
            coef[j, l] = c[l]


def closure_batch(alphas, int N, nodes, weights):
    cdef const double[::1] a = np.ascontiguousarray(alphas, dtype=np.float64).reshape(-1)
    cdef const double[::1] x = np.ascontiguousarray(nodes, dtype=np.float64)
    cdef const double[::1] wq = np.ascontiguousarray(weights, dtype=np.float64)
    cdef int m = a.shape[0]
    cdef int q = x.shape[0]
    cdef int n = N + 2
    cdef int nn = N + 1

    kappa_a = np.zeros((m, n, n))
    kappa_t_a = np.zeros((m, n, n))
    dkappa_a = np.zeros((m, n, n))
    R_a = np.zeros((m, nn))
    Mt_a = np.zeros((m, nn, nn))
    dproj_a = np.zeros((m, nn, nn))
    coef_a = np.zeros((m, n, n))
    coeft_a = np.zeros((m, n, n))
    dcoef_a = np.zeros((m, n, n))
    cdef double[:, :, ::1] kappa = kappa_a
    cdef double[:, :, ::1] kappa_t = kappa_t_a
    cdef double[:, :, ::1] dkappa = dkappa_a
    cdef double[:, ::1] R = R_a
    cdef double[:, :, ::1] Mt = Mt_a
    cdef double[:, :, ::1] dproj = dproj_a
    cdef double[:, :, ::1] coef = coef_a
    cdef double[:, :, ::1] coeft = coeft_a
    cdef double[:, :, ::1] dcoef = dcoef_a

    cdef double[::1] om4 = np.empty(q)
    cdef double[::1] om5 = np.empty(q)
    cdef double[::1] ww4 = np.empty(q)
    cdef double[::1] ww5 = np.empty(q)
    cdef double[::1] wd = np.empty(q)
    cdef double[:, ::1] phi = np.empty((n, q))
    cdef double[:, ::1] pht = np.empty((n, q))
    cdef double[:, ::1] dphi = np.empty((n, q))
    cdef double[:, ::1] dbig = np.empty((n, q))
    cdef double[:, ::1] powers = np.empty((n, q))
    cdef double[::1] nrm = np.empty(n)
    cdef double[::1] nrmt = np.empty(n)
    cdef double[::1] v = np.empty(q)
    cdef double[::1] c = np.empty(n)
    cdef int i, j, k, l, p
    cdef double b, h, s, s2, s3

    with nogil:
        for l in range(q):
            powers[0, l] = 1.0
        for j in range(1, n):
            for l in range(q):
                powers[j, l] = powers[j - 1, l] * x[l]

        for i in range(m):
            for l in range(q):
                b = 1.0 + a[i] * x[l]
                om4[l] = 1.0 / (b * b * b * b)
                om5[l] = om4[l] / b
                ww4[l] = wq[l] * om4[l]
                ww5[l] = wq[l] * om5[l]
                wd[l] = -4.0 * wq[l] * x[l] * om5[l]
            _gs(x, ww4, n, phi, coef[i], nrm, v, c)
            _gs(x, ww5, n, pht, coeft[i], nrmt, v, c)

            for j in range(n):
                for l in range(q):
                    dphi[j, l] = 0.0
            for j in range(1, n):
                for k in range(j):
                    s = 0.0
                    for l in range(q):
                        s += wd[l] * phi[j, l] * phi[k, l]
                    h = s / nrm[k]
                    for l in range(q):
                        dphi[j, l] -= h * phi[k, l]
                    for p in range(n):
                        dcoef[i, j, p] -= h * coef[i, k, p]
            for j in range(n):
                for l in range(q):
                    dbig[j, l] = dphi[j, l] * om4[l] - 4.0 * x[l] * om5[l] * phi[j, l]

            for j in range(n):
                for k in range(n):
                    s = 0.0
                    s2 = 0.0
                    s3 = 0.0
                    for l in range(q):
                        s += ww4[l] * powers[j, l] * phi[k, l]
                        s2 += ww5[l] * powers[j, l] * pht[k, l]
                        s3 += wq[l] * powers[j, l] * dbig[k, l]
                    kappa[i, j, k] = s
                    kappa_t[i, j, k] = s2
                    dkappa[i, j, k] = s3

            for k in range(nn):
                s = 0.0
                for l in range(q):
                    s += wq[l] * pht[k, l]
                R[i, k] = s
                for j in range(nn):
                    s = 0.0
                    s2 = 0.0
                    for l in range(q):
                        s += ww5[l] * x[l] * pht[k, l] * pht[j, l]
                        s2 += wq[l] * pht[k, l] * dbig[j, l]
                    Mt[i, k, j] = s / nrmt[k]
                    dproj[i, k, j] = s2 / nrmt[k]

    return {
        "kappa": kappa_a,
        "kappa_t": kappa_t_a,
        "dkappa": dkappa_a,
        "R": R_a,
        "Mt": Mt_a,
        "dproj": dproj_a,
        "coeffs": coef_a,
        "coeffs_t": coeft_a,
        "dcoeffs": dcoef_a,
    }
