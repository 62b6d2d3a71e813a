"""NumPy implementations of the compiled kernels in ``_kernels.pyx``.

Same signatures and the same arithmetic order per output row, so the two
backends agree to round-off.
"""

import math

import numpy as np


def csr_spmm(indptr, indices, data, Z):
    n = indptr.shape[0] - 1
    out = np.zeros((n, Z.shape[1]), dtype=np.float64)
    if indices.size == 0:
        return out
    prod = data[:, None] * Z[indices]
    nonempty = np.flatnonzero(indptr[1:] > indptr[:-1])
    out[nonempty] = np.add.reduceat(prod, indptr[nonempty], axis=0)
    return out


def emda_loop(s, ratio, phi, mu0, max_iters, tol):
    R = s.shape[0]
    log_r = math.log(R)
    mu = np.array(mu0, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logmu = np.where(mu > 0.0, np.log(np.maximum(mu, 1e-320)), -1e300)
    converged = False
    t = 0
    while t < max_iters:
        t += 1
        step = math.sqrt(2.0 * log_r / (t * phi * phi))
        logmu = logmu - step * (2.0 * ratio * mu + s)
        m = logmu.max()
        new = np.exp(logmu - m)
        z = new.sum()
        new /= z
        logmu = logmu - m - math.log(z)
        diff = np.abs(new - mu).sum()
        mu = new
        if diff < tol:
            converged = True
            break
    return mu, t, converged
