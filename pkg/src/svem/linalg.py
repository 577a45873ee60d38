"""Sparse SPD factorization with reusable symbolic analysis.

CHOLMOD (through cvxopt) is used when available; otherwise SuperLU from
scipy. Above ``cg_threshold`` unknowns a Jacobi-preconditioned conjugate
gradient solve is used instead of a factorization.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

try:  # pragma: no cover - depends on the environment
    from cvxopt import cholmod as _cholmod
    from cvxopt import matrix as _cvx_matrix
    from cvxopt import spmatrix as _cvx_spmatrix

    _cholmod.options["supernodal"] = 2
    _HAVE_CHOLMOD = True
except ImportError:  # pragma: no cover
    _HAVE_CHOLMOD = False


class NotPositiveDefiniteError(ArithmeticError):
    pass


def have_cholmod() -> bool:
    return _HAVE_CHOLMOD


class SymbolicCholesky:
    """Factorization for a fixed sparsity pattern, refactorized per value set.

    Args:
        pattern: square sparse matrix whose structure (including explicit
            zeros) defines the pattern. Only the lower triangle is read.
        backend: ``"cholmod"``, ``"splu"`` or ``"auto"``.
    """

    def __init__(self, pattern, backend: str = "auto"):
        A = sps.csc_matrix(pattern)
        A.sort_indices()
        self.n = A.shape[0]
        self._csc_indptr = A.indptr
        self._csc_indices = A.indices
        rows = A.indices
        cols = np.repeat(np.arange(self.n), np.diff(A.indptr))
        # CSC data positions of the lower triangle, in column-major row-sorted order
        self.lower = np.flatnonzero(rows >= cols)
        if backend == "auto":
            backend = "cholmod" if _HAVE_CHOLMOD else "splu"
        if backend == "cholmod" and not _HAVE_CHOLMOD:
            raise RuntimeError("cvxopt CHOLMOD is not available")
        self.backend = backend
        self._rows = rows
        self._cols = cols
        self._factor = None
        if backend == "cholmod":
            lr, lc = rows[self.lower], cols[self.lower]
            self._M = _cvx_spmatrix(np.ones(len(lr)).tolist(), lr.tolist(), lc.tolist(), (self.n, self.n))
            if len(self._M.V) != len(lr):
                raise RuntimeError("pattern contains duplicate entries")
            self._symbolic = _cholmod.symbolic(self._M)

    def csc_data(self, A) -> np.ndarray:
        """CSC data of ``A`` aligned with the stored pattern."""
        A = sps.csc_matrix(A)
        A.sort_indices()
        if not (np.array_equal(A.indptr, self._csc_indptr) and np.array_equal(A.indices, self._csc_indices)):
            A = A + sps.csc_matrix((np.zeros(len(self._rows)), self._csc_indices, self._csc_indptr), shape=A.shape)
            A.sort_indices()
            if not np.array_equal(A.indices, self._csc_indices):
                raise ValueError("matrix structure is not contained in the pattern")
        return A.data

    def factor_lower(self, lower_values) -> "SymbolicCholesky":
        """Numeric factorization from lower-triangle values in pattern order."""
        lower_values = np.asarray(lower_values, dtype=float)
        if self.backend == "cholmod":
            self._M.V = _cvx_matrix(lower_values)
            F = _cholmod.symbolic(self._M) if self._symbolic is None else self._symbolic
            try:
                _cholmod.numeric(self._M, F)
            except ArithmeticError as exc:
                raise NotPositiveDefiniteError("matrix is not positive definite") from exc
            self._factor = F
        else:
            lr, lc = self._rows[self.lower], self._cols[self.lower]
            L = sps.coo_matrix((lower_values, (lr, lc)), shape=(self.n, self.n))
            A = (L + sps.triu(L.T, k=1)).tocsc()
            if np.any(A.diagonal() <= 0):
                raise NotPositiveDefiniteError("matrix is not positive definite")
            try:
                self._factor = spla.splu(A)
            except RuntimeError as exc:
                raise NotPositiveDefiniteError(str(exc)) from exc
            self._A = A
        return self

    def factor(self, A) -> "SymbolicCholesky":
        return self.factor_lower(self.csc_data(A)[self.lower])

    def solve(self, b) -> np.ndarray:
        if self._factor is None:
            raise RuntimeError("factor() must be called before solve()")
        b = np.asarray(b, dtype=float)
        if self.backend == "cholmod":
            X = _cvx_matrix(np.array(b.reshape(self.n, -1), dtype=float, order="F"))
            _cholmod.solve(self._factor, X)
            return np.array(X).reshape(b.shape)
        return self._factor.solve(b)


class SPDSolver:
    """One-shot SPD solve with a sparse factorization or Jacobi-preconditioned CG.

    Args:
        A: SPD sparse matrix.
        cg_threshold: use conjugate gradients when the size exceeds this.
        rtol: CG relative tolerance.
        refine: number of iterative-refinement steps after a direct solve.
    """

    def __init__(self, A, cg_threshold: int = 500_000, rtol: float = 1e-12, maxiter: int | None = None, refine: int = 1):
        self.A = sps.csr_matrix(A)
        self.n = self.A.shape[0]
        self.iterative = self.n > cg_threshold
        self.rtol = rtol
        self.maxiter = maxiter
        self.refine = refine
        if not self.iterative:
            self._chol = SymbolicCholesky(self.A).factor(self.A)
        else:
            d = self.A.diagonal()
            if np.any(d <= 0):
                raise NotPositiveDefiniteError("matrix has non-positive diagonal entries")
            self._M = sps.diags(1.0 / d)

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if self.iterative:
            x, info = spla.cg(self.A, b, rtol=self.rtol, atol=0.0, M=self._M, maxiter=self.maxiter)
            if info != 0:
                raise RuntimeError(f"conjugate gradients did not converge (info={info})")
            return x
        x = self._chol.solve(b)
        for _ in range(self.refine):
            x = x + self._chol.solve(b - self.A @ x)
        return x
