# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: CSR sparse-dense products and the entropic mirror descent loop.

Each output row of ``csr_spmm`` is owned by exactly one thread and accumulated
in storage order, so results are bitwise reproducible regardless of the
thread count.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport exp, log, sqrt, fabs

cnp.import_array()


def csr_spmm(const cnp.int64_t[::1] indptr,
             const cnp.int64_t[::1] indices,
             const double[::1] data,
             const double[:, ::1] Z):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = Z.shape[1]
    out = np.zeros((n, Z.shape[1]), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, k, c
    cdef cnp.int64_t j
    cdef double v
    for i in prange(n, nogil=True, schedule="static"):
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            v = data[k]
            for c in range(d):
                o[i, c] += v * Z[j, c]
    return out


def emda_loop(const double[::1] s, double ratio, double phi,
              const double[::1] mu0, Py_ssize_t max_iters, double tol):
    """Run the multiplicative simplex update; returns (mu, iterations, converged).

    State is carried as log-weights and renormalised by log-sum-exp each step.
    """
    cdef Py_ssize_t R = s.shape[0]
    cdef Py_ssize_t r, t
    cdef double log_r = log(<double>R)
    cdef double step, m, z, diff
    logmu_arr = np.empty(R, dtype=np.float64)
    mu_arr = np.array(mu0, dtype=np.float64)
    new_arr = np.empty(R, dtype=np.float64)
    cdef double[::1] logmu = logmu_arr
    cdef double[::1] mu = mu_arr
    cdef double[::1] new = new_arr
    cdef bint converged = False
    for r in range(R):
        logmu[r] = log(mu[r]) if mu[r] > 0.0 else -1e300
    t = 0
    while t < max_iters:
        t += 1
        step = sqrt(2.0 * log_r / (<double>t * phi * phi))
        m = -1e308
        for r in range(R):
            logmu[r] = logmu[r] - step * (2.0 * ratio * mu[r] + s[r])
            if logmu[r] > m:
                m = logmu[r]
        z = 0.0
        for r in range(R):
            new[r] = exp(logmu[r] - m)
            z += new[r]
        diff = 0.0
        for r in range(R):
            new[r] = new[r] / z
            logmu[r] = logmu[r] - m - log(z)
            diff += fabs(new[r] - mu[r])
            mu[r] = new[r]
        if diff < tol:
            converged = True
            break
    return mu_arr, t, converged
