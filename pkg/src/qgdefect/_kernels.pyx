# cython: language_level=3
"""Compiled inner loops for the energy and quadratic forms."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, pow

cnp.import_array()


def energy_grad(const int[::1] indptr, const int[::1] indices, const double[::1] data,
                const double[::1] u, const long[::1] dofs, const double[::1] weights,
                double q, double[::1] grad):
    """Fill ``grad`` with K u - w |u_d|^(q-2) u_d and return the energy."""
    cdef Py_ssize_t n = u.shape[0], i, k, d
    cdef double s, quad = 0.0, comp = 0.0, t, x, vert = 0.0, a, ap
    with nogil:
        for i in range(n):
            s = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                s += data[k] * u[indices[k]]
            grad[i] = s
            # Neumaier sum keeps round-off on par with NumPy's pairwise dot
            x = s * u[i]
            t = quad + x
            if fabs(quad) >= fabs(x):
                comp += (quad - t) + x
            else:
                comp += (x - t) + quad
            quad = t
        quad += comp
        for k in range(dofs.shape[0]):
            d = dofs[k]
            a = fabs(u[d])
            if a > 0.0:
                ap = pow(a, q - 2.0)
                vert += weights[k] * ap * a * a
                grad[d] -= weights[k] * ap * u[d]
    return 0.5 * quad - vert / q


def quad_form(const int[::1] indptr, const int[::1] indices, const double[::1] data,
              const double[::1] x, const double[::1] y):
    """Return x^T A y for a CSR matrix A without a temporary."""
    cdef Py_ssize_t n = x.shape[0], i, k
    cdef double s, total = 0.0, comp = 0.0, t, v
    with nogil:
        for i in range(n):
            s = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                s += data[k] * y[indices[k]]
            v = x[i] * s
            t = total + v
            if fabs(total) >= fabs(v):
                comp += (total - t) + v
            else:
                comp += (v - t) + total
            total = t
    return total + comp

