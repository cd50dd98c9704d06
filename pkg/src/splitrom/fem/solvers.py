"""Sparse linear solvers: direct LU (SuperLU) and Jacobi-preconditioned CG."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import DimensionMismatch, InvalidSolverChoice, SolverDiverged


@dataclass(frozen=True)
class SolverOptions:
    method: str = "lu"  # "lu" or "cg"
    tol: float = 1e-10  # relative residual target
    maxiter: int | None = None

    def __post_init__(self):
        if self.method not in ("lu", "cg"):
            raise InvalidSolverChoice(f"unknown solver {self.method!r}")


def is_symmetric(A, rtol=1e-12):
    A = sp.csr_matrix(A)
    scale = abs(A).max() if A.nnz else 0.0
    if scale == 0.0:
        return True
    D = A - A.T
    return (abs(D).max() if D.nnz else 0.0) <= rtol * scale


def conjugate_gradient(A, b, tol=1e-10, maxiter=None, x0=None):
    """Jacobi-preconditioned CG; returns (x, iterations, relative residual)."""
    n = len(b)
    maxiter = maxiter or max(10 * n, 100)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0, 0.0
    d = A.diagonal()
    if np.any(d <= 0):
        raise SolverDiverged("CG needs a positive diagonal", residual=1.0)
    dinv = 1.0 / d
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r) / bnorm
    for it in range(1, maxiter + 1):
        if res <= tol:
            return x, it - 1, res
        Ap = A @ p
        pAp = p @ Ap
        if not pAp > 0.0:
            raise SolverDiverged("CG breakdown: matrix is not positive definite", residual=res)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r) / bnorm
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    if res <= tol:
        return x, maxiter, res
    raise SolverDiverged(f"CG did not converge in {maxiter} iterations", residual=res)


class _Factor:
    def __init__(self, A):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", sp.SparseEfficiencyWarning)
                self._lu = spla.splu(sp.csc_matrix(A))
        except RuntimeError as exc:
            raise SolverDiverged(f"LU factorization failed: {exc}", residual=np.inf) from None

    def solve(self, b):
        return self._lu.solve(b)


def solve_sparse(A, b, opts: SolverOptions | None = None):
    """Solve ``A x = b`` and check ``|Ax - b| <= tol |b|``."""
    opts = opts or SolverOptions()
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != len(b):
        raise DimensionMismatch(f"cannot solve {A.shape} system with rhs of length {len(b)}")
    if opts.method == "cg":
        if not is_symmetric(A):
            raise InvalidSolverChoice("conjugate gradient requires a symmetric matrix")
        x, _, _ = conjugate_gradient(A, b, opts.tol, opts.maxiter)
        return x
    x = _Factor(A).solve(b)
    _check_residual(A, x, b, opts.tol)
    return x


def _check_residual(A, x, b, tol):
    bnorm = np.linalg.norm(b)
    res = np.linalg.norm(A @ x - b)
    rel = res / bnorm if bnorm > 0 else res
    if not np.isfinite(rel) or rel > max(tol, 1e-8):
        # direct solves are accepted down to 1e-8: LU residuals track cond(A) * eps
        raise SolverDiverged(f"direct solve residual {rel:.3e} exceeds tolerance", residual=rel)


class ConstrainedSystem:
    """``A x = b`` with ``x[fixed] = values`` imposed by symmetric elimination.

    Rows and columns of fixed dofs are removed and their known values moved to
    the right-hand side, so a symmetric ``A`` stays symmetric. The reduced
    matrix is factored once (LU) and reused across right-hand sides.
    """

    def __init__(self, A, fixed, opts: SolverOptions | None = None):
        A = sp.csr_matrix(A)
        n = A.shape[0]
        self.n = n
        self.opts = opts or SolverOptions()
        self.fixed = np.asarray(fixed, dtype=np.int64)
        mask = np.ones(n, dtype=bool)
        mask[self.fixed] = False
        self.free = np.flatnonzero(mask)
        Af = A[self.free]
        self.A_ff = Af[:, self.free].tocsr()
        self.A_fc = Af[:, self.fixed].tocsr()
        if self.opts.method == "cg" and not is_symmetric(self.A_ff):
            raise InvalidSolverChoice("conjugate gradient requires a symmetric matrix")
        self._factor = _Factor(self.A_ff) if self.opts.method == "lu" else None
        self._last = None

    def solve(self, b, values=None):
        b = np.asarray(b, dtype=float)
        x = np.zeros(self.n)
        rhs = b[self.free]
        if values is not None and len(self.fixed):
            vals = np.broadcast_to(np.asarray(values, dtype=float), self.fixed.shape)
            x[self.fixed] = vals
            rhs = rhs - self.A_fc @ vals
        if self._factor is not None:
            xf = self._factor.solve(rhs)
            _check_residual(self.A_ff, xf, rhs, self.opts.tol)
        else:
            # warm start from the previous solution
            xf, _, _ = conjugate_gradient(self.A_ff, rhs, self.opts.tol, self.opts.maxiter, self._last)
            self._last = xf
        x[self.free] = xf
        return x
