"""Lowest eigenpair of the Laplacian pencil, optionally with an attractive vertex delta."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh, splu

from .fem import AssembledForms, GraphFunction


class EigenError(RuntimeError):
    pass


@dataclass
class EigenResult:
    lam: float
    vector: GraphFunction
    residual: float
    iterations: int
    shift: float
    below_shift: int            # eigenvalues below lam - gap_probe (should be 0)
    info: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {"lambda": self.lam, "residual": self.residual, "iterations": self.iterations,
                "shift": self.shift, "below": self.below_shift, **self.info}


def inertia_below(A, M, sigma: float) -> int:
    """Number of eigenvalues of (A, M) below ``sigma``, from an LDL^T-style factorization."""
    S = sp.csc_matrix(A - sigma * M)
    lu = splu(S, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
              options={"SymmetricMode": True})
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise EigenError("factorization pivoted off the diagonal; inertia unavailable")
    return int(np.sum(lu.U.diagonal() < 0))


def _lower_bound(M, dof, alpha):
    """Spectrum of (K - alpha e e^T, M) with K >= 0 lies above -alpha (M^-1)_dd."""
    if alpha == 0:
        return 0.0
    e = np.zeros(M.shape[0])
    e[dof] = 1.0
    return -alpha * float(splu(sp.csc_matrix(M)).solve(e)[dof])


def _lowest(forms: AssembledForms, A, floor: float, tol: float, max_polish: int = 50) -> EigenResult:
    M = forms.M
    n = A.shape[0]
    if n == 0:
        raise EigenError("no free degrees of freedom")
    # strictly below the spectrum, so the eigenvalue nearest the shift is the lowest
    sigma = floor - 1e-3 * max(1.0, abs(floor))
    v0 = np.ones(n) / np.sqrt(float(np.ones(n) @ (M @ np.ones(n))))
    if n <= 2:
        from scipy.linalg import eigh
        w, V = eigh(A.toarray(), M.toarray())
        lam, x = float(w[0]), V[:, 0]
    else:
        try:
            w, V = eigsh(sp.csc_matrix(A), k=1, M=sp.csc_matrix(M), sigma=sigma, which="LM",
                         v0=v0, tol=tol * 1e-2)
        except RuntimeError:
            sigma -= 1.0
            w, V = eigsh(sp.csc_matrix(A), k=1, M=sp.csc_matrix(M), sigma=sigma, which="LM",
                         v0=v0, tol=tol * 1e-2)
        lam, x = float(w[0]), V[:, 0]
    # inverse-iteration polish at the same shift
    lu = splu(sp.csc_matrix(A - sigma * M))
    it = 0
    res = np.inf
    for it in range(max_polish + 1):
        x = x / np.sqrt(float(x @ (M @ x)))
        Ax = A @ x
        lam = float(x @ Ax)
        r = Ax - lam * (M @ x)
        res = float(np.linalg.norm(r))
        if res <= tol * max(1.0, float(np.linalg.norm(M @ x))):
            break
        if it < max_polish:
            x = lu.solve(M @ x)
    if np.sum(x) < 0:
        x = -x
    probe = lam - 1e-8 * max(1.0, abs(lam))
    try:
        below = inertia_below(A, M, probe)
    except EigenError:
        below = -1
    return EigenResult(lam, GraphFunction(forms, x), res, it, sigma, below)


def bottom_eigen(forms: AssembledForms, tol: float = 1e-10) -> EigenResult:
    """Smallest generalized eigenvalue of (K, M)."""
    return _lowest(forms, sp.csr_matrix(forms.K, dtype=float), -1e-6, tol)


def delta_eigen(forms: AssembledForms, alpha: float, v=None, tol: float = 1e-10) -> EigenResult:
    """Smallest eigenvalue of (K - alpha e_v e_v^T, M) for a vertex ``v`` (index or id)."""
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    g = forms.graph
    if v is None:
        vi = g.defects[0] if g.defects else g.index(tuple(g.truncation["center"]))
    else:
        vi = v if isinstance(v, (int, np.integer)) else g.index(v)
    dof = forms.vertex_dof(int(vi))
    if dof < 0:
        raise ValueError("vertex is eliminated by the truncation")
    A = sp.csr_matrix(forms.K, dtype=float).tolil()
    A[dof, dof] -= alpha
    A = A.tocsr()
    floor = min(_lower_bound(forms.M, dof, alpha), -1e-6)
    out = _lowest(forms, A, floor, tol)
    out.info.update(alpha=alpha, vertex=str(g.vertices[int(vi)].id), rayleigh=out.lam)
    return out


def rayleigh(forms: AssembledForms, u, alpha: float = 0.0, v=None) -> float:
    u = np.asarray(u, dtype=float)
    num = float(u @ (forms.K @ u))
    if alpha:
        g = forms.graph
        vi = g.defects[0] if v is None else (v if isinstance(v, (int, np.integer)) else g.index(v))
        num -= alpha * forms.expand(u)[int(vi)] ** 2
    return num / float(u @ (forms.M @ u))
