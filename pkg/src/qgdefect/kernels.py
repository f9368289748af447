"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the NumPy
fallback is used. ``use_backend`` switches explicitly (benchmarks, tests).
"""

import numpy as np

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_active = _compiled if _compiled is not None else _kernels_py


def available_backends():
    return ["compiled", "python"] if _compiled is not None else ["python"]


def backend_name():
    return "compiled" if _active is _compiled and _compiled is not None else "python"


def use_backend(name):
    """Select ``"compiled"`` or ``"python"``; returns the previous name."""
    global _active
    prev = backend_name()
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        _active = _compiled
    elif name == "python":
        _active = _kernels_py
    else:
        raise ValueError(f"unknown backend {name!r}")
    return prev


def energy_grad(K, u, dofs, weights, q, grad=None):
    """Energy 0.5 u^T K u - sum w |u_d|^q / q and its gradient (fused pass)."""
    if grad is None:
        grad = np.empty_like(u)
    e = _active.energy_grad(K.indptr, K.indices, K.data, u, dofs, weights, float(q), grad)
    return e, grad


def quad_form(A, x, y):
    return _active.quad_form(A.indptr, A.indices, A.data, x, y)


def gauss_lp(a, b, h, u, p):
    # NumPy's vectorized power beats a scalar pow loop here (see benchmarks/), so no compiled variant
    return _kernels_py.gauss_lp(a, b, h, u, float(p))
