"""Sparse linear algebra used by every other module.

Matrices are ``scipy.sparse.csr_matrix`` objects that have been finalized
(duplicates summed, indices sorted).  Direct solves go through SuperLU and
the Krylov solver is a full (non-restarted) GMRES with modified Gram-Schmidt.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

GMRES_MAX_ITER = 500


class SingularMatrixError(RuntimeError):
    """Raised when a direct factorization hits a zero pivot."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class GmresBreakdown(RuntimeError):
    pass


def finalize(rows, cols, vals, shape) -> sp.csr_matrix:
    """Build a CSR matrix from COO triplets, summing duplicates."""
    A = sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    if not np.all(np.isfinite(A.data)):
        raise FloatingPointError("non-finite entries in assembled matrix")
    return A


def submatrix(A: sp.spmatrix, rows, cols=None) -> sp.csr_matrix:
    if cols is None:
        cols = rows
    A = sp.csr_matrix(A)
    return A[rows][:, cols].tocsr()


def _locate_zero_pivot(A: sp.csr_matrix) -> int | None:
    empty = np.flatnonzero(np.diff(A.indptr) == 0)
    if empty.size:
        return int(empty[0])
    if A.shape[0] > 4000:
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lu, piv = scipy.linalg.lu_factor(A.toarray(), check_finite=False)
    zero = np.flatnonzero(np.abs(np.diag(lu)) == 0.0)
    return int(zero[0]) if zero.size else None


@dataclass(frozen=True)
class LUFactorization:
    """Immutable wrapper around a SuperLU object; safe for concurrent reads."""

    n: int
    _lu: object = field(repr=False)

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise ValueError(f"rhs has length {b.shape[0]}, expected {self.n}")
        return self._lu.solve(b)


def lu_factorize(A: sp.spmatrix) -> LUFactorization:
    """LU with partial pivoting.

    Raises
    ------
    SingularMatrixError
        If a zero pivot occurs.  ``err.row`` points at the offending row when
        it can be located (an empty row, or a zero pivot in a dense
        re-factorization for small systems).
    """
    A = sp.csc_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got {A.shape}")
    try:
        lu = spla.splu(A, permc_spec="COLAMD", diag_pivot_thresh=1.0)
    except RuntimeError as exc:
        row = _locate_zero_pivot(A.tocsr())
        where = f" at row {row}" if row is not None else ""
        raise SingularMatrixError(f"singular matrix{where}: {exc}", row=row) from exc
    return LUFactorization(A.shape[0], lu)


def lu_solve(factor: LUFactorization, b: np.ndarray) -> np.ndarray:
    return factor.solve(b)


def export_matrix_market(path, A: sp.spmatrix, comment: str = "") -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment)


@dataclass
class GmresReport:
    iterations: int
    rel_residual: float
    converged: bool
    breakdown: bool = False
    history: list[float] = field(default_factory=list)


def gmres(
    apply_op: Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    rel_tol: float = 1e-8,
    max_iter: int = GMRES_MAX_ITER,
) -> tuple[np.ndarray, GmresReport]:
    """Full GMRES from a zero initial guess.

    ``history`` holds the relative residual after each iteration (index 0 is
    the initial residual, 1.0).  A zero Arnoldi norm ends the iteration with
    ``breakdown=True``; whether it also counts as converged is decided by the
    residual it leaves behind.
    """
    b = np.asarray(rhs, dtype=float)
    n = b.shape[0]
    beta = np.linalg.norm(b)
    if not np.isfinite(beta):
        raise FloatingPointError("non-finite right-hand side")
    if beta == 0.0:
        return np.zeros(n), GmresReport(0, 0.0, True, history=[0.0])

    m = min(max_iter, GMRES_MAX_ITER, n)
    V = np.zeros((m + 1, n))
    H = np.zeros((m + 1, m))
    cs = np.zeros(m)
    sn = np.zeros(m)
    g = np.zeros(m + 1)
    g[0] = beta
    V[0] = b / beta
    history = [1.0]
    breakdown = False
    k = 0
    for j in range(m):
        w = np.array(apply_op(V[j]), dtype=float)  # copy: the operator may return its input
        scale = np.linalg.norm(w)
        for i in range(j + 1):
            H[i, j] = V[i] @ w
            w -= H[i, j] * V[i]
        H[j + 1, j] = np.linalg.norm(w)
        # zero up to rounding relative to the incoming vector
        if H[j + 1, j] <= 1e-14 * max(scale, 1e-300):
            H[j + 1, j] = 0.0
            breakdown = True
        else:
            V[j + 1] = w / H[j + 1, j]
        for i in range(j):
            h0, h1 = H[i, j], H[i + 1, j]
            H[i, j] = cs[i] * h0 + sn[i] * h1
            H[i + 1, j] = -sn[i] * h0 + cs[i] * h1
        r = np.hypot(H[j, j], H[j + 1, j])
        if r == 0.0:
            raise GmresBreakdown("singular Hessenberg matrix, operator is singular on the Krylov space")
        cs[j], sn[j] = H[j, j] / r, H[j + 1, j] / r
        H[j, j] = r
        H[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        k = j + 1
        history.append(abs(g[j + 1]) / beta)
        if history[-1] <= rel_tol or breakdown:
            break

    y = scipy.linalg.solve_triangular(H[:k, :k], g[:k])
    x = V[:k].T @ y
    rel = history[-1]
    if breakdown:
        # the Givens estimate is exact only in exact arithmetic
        rel = float(np.linalg.norm(b - apply_op(x)) / beta)
        history[-1] = rel
    converged = rel <= rel_tol
    return x, GmresReport(k, float(rel), bool(converged), breakdown, history)
