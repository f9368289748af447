"""NumPy versions of the compiled kernels, used when the extension is unavailable."""

import numpy as np

_G0 = 0.5 - 0.5 / np.sqrt(3.0)
_G1 = 0.5 + 0.5 / np.sqrt(3.0)


def _matvec(indptr, indices, data, x):
    rows = np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))
    return np.bincount(rows, weights=data * x[indices], minlength=len(indptr) - 1)


def energy_grad(indptr, indices, data, u, dofs, weights, q, grad):
    Ku = _matvec(indptr, indices, data, u)
    ud = u[dofs]
    a = np.abs(ud)
    ap = a ** (q - 2.0)
    grad[:] = Ku
    np.subtract.at(grad, dofs, weights * ap * ud)
    return 0.5 * float(Ku @ u) - float(np.sum(weights * ap * a * a)) / q


def quad_form(indptr, indices, data, x, y):
    return float(x @ _matvec(indptr, indices, data, y))


def gauss_lp(a, b, h, u, p):
    ua, ub = u[a], u[b]
    v0 = np.abs(ua * (1.0 - _G0) + ub * _G0) ** p
    v1 = np.abs(ua * (1.0 - _G1) + ub * _G1) ** p
    return float(np.sum(0.5 * h * (v0 + v1)))
