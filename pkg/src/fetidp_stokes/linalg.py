"""Sparse and dense linear algebra kernels.

Matrices are stored as canonical :class:`scipy.sparse.csr_matrix` objects
(sorted column indices, duplicates summed, explicit zeros dropped).  Direct
solves use SuperLU with partial pivoting, which handles the symmetric
indefinite saddle blocks that appear everywhere in this package.  Singular
but consistent systems are solved by null-space deflation: the rhs is
checked against the known null basis, a few unknowns are pinned to zero,
and the null component is removed from the result.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

SOLVE_RTOL = 1e-10
SYMMETRY_TOL = 1e-12


class FactorizationError(RuntimeError):
    """Raised when a direct factorization breaks down."""

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class InconsistentRhsError(ValueError):
    """Raised when a singular system is given a rhs outside its range."""

    def __init__(self, message, residual_norm):
        super().__init__(message)
        self.residual_norm = residual_norm


def canonical(M) -> sp.csr_matrix:
    """Return ``M`` as canonical CSR (sorted, summed, zeros dropped)."""
    M = sp.csr_matrix(M, dtype=float)
    M.sum_duplicates()
    M.eliminate_zeros()
    M.sort_indices()
    return M


def from_triplets(triplets, nrows: int, ncols: int) -> sp.csr_matrix:
    """Build a canonical CSR matrix from ``(row, col, value)`` triplets.

    Duplicate entries are summed and explicit zeros are dropped.

    Raises
    ------
    IndexError
        If any index lies outside the declared shape.
    """
    if nrows < 0 or ncols < 0:
        raise ValueError("matrix dimensions must be nonnegative")
    triplets = list(triplets)
    if triplets:
        rows, cols, vals = (np.asarray(a) for a in zip(*triplets))
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
        vals = np.zeros(0)
    return from_coo(rows, cols, vals, nrows, ncols)


def from_coo(rows, cols, vals, nrows: int, ncols: int) -> sp.csr_matrix:
    """Array version of :func:`from_triplets`."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=float)
    if rows.size:
        if rows.min() < 0 or rows.max() >= nrows:
            raise IndexError(f"row index out of range [0, {nrows})")
        if cols.min() < 0 or cols.max() >= ncols:
            raise IndexError(f"column index out of range [0, {ncols})")
    M = sp.coo_matrix((vals, (rows, cols)), shape=(nrows, ncols))
    return canonical(M)


def spmv(M, x) -> np.ndarray:
    """Sparse matrix-vector product with a dimension check."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != M.shape[1]:
        raise ValueError(f"dimension mismatch: matrix has {M.shape[1]} columns, vector has {x.shape[0]} entries")
    return M @ x


def _zero_pivot(M) -> int | None:
    """Locate the first zero pivot of a dense LU, or None."""
    if M.shape[0] > 4000:
        return None
    _, _, info = sla.lapack.dgetrf(M.toarray())
    return int(info) - 1 if info > 0 else None


def _lu(M):
    try:
        return spla.splu(sp.csc_matrix(M))
    except RuntimeError as exc:
        pivot = _zero_pivot(M)
        where = f" (zero pivot at row {pivot})" if pivot is not None else ""
        raise FactorizationError(f"factorization breakdown: {exc}{where}", pivot) from exc


@dataclass(frozen=True)
class Factorization:
    """Direct factorization of a square sparse (possibly singular) matrix.

    In singular-consistent mode ``null_basis`` holds an orthonormal basis of
    the kernel; solutions are returned orthogonal to it.
    """

    matrix: sp.csr_matrix
    lu: object = field(repr=False)
    null_basis: np.ndarray | None = None
    pinned: np.ndarray | None = None

    @property
    def is_singular_consistent_mode(self) -> bool:
        return self.null_basis is not None

    @property
    def shape(self):
        return self.matrix.shape

    def solve(self, b):
        return solve(self, b)


def _pin_indices(N: np.ndarray) -> np.ndarray:
    # pivoted QR of N^T picks rows where the null basis is best conditioned
    _, _, piv = sla.qr(N.T, pivoting=True, mode="economic")
    return np.sort(piv[: N.shape[1]])


def factor_symmetric_indefinite(M, null_basis=None) -> Factorization:
    """Factor a square, structurally symmetric sparse matrix.

    Parameters
    ----------
    M : sparse matrix
    null_basis : array (n, k), optional
        Columns spanning ``Ker(M)``.  When given the factorization enters
        singular-consistent mode: ``k`` unknowns are pinned to zero, the
        pinned matrix is factored, and solves deflate the null component.
    """
    M = canonical(M)
    n, ncol = M.shape
    if n != ncol:
        raise ValueError("matrix must be square")
    if null_basis is None:
        return Factorization(M, _lu(M))
    N = np.asarray(null_basis, dtype=float)
    if N.ndim == 1:
        N = N[:, None]
    N, _ = np.linalg.qr(N)
    pins = _pin_indices(N)
    keep = np.ones(n, dtype=bool)
    keep[pins] = False
    D = sp.diags(keep.astype(float))
    pinned = D @ M @ D + sp.diags((~keep).astype(float))
    return Factorization(M, _lu(pinned), N, pins)


def solve(F: Factorization, b) -> np.ndarray:
    """Solve ``M x = b`` with a factorization (rhs may be a 2-D block)."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != F.shape[0]:
        raise ValueError("rhs length does not match factorization")
    if F.null_basis is None:
        return F.lu.solve(b)
    N = F.null_basis
    coef = N.T @ b
    bnorm = np.linalg.norm(b)
    cnorm = np.linalg.norm(coef)
    if cnorm > SOLVE_RTOL * max(bnorm, np.finfo(float).tiny) and cnorm > 0.0:
        raise InconsistentRhsError(
            f"rhs not in range of singular matrix: null-space residual {cnorm:.3e} (|b| = {bnorm:.3e})", cnorm
        )
    bp = b - N @ coef
    bp[F.pinned] = 0.0
    x = F.lu.solve(bp)
    return x - N @ (N.T @ x)


def dense_sym_eig(M):
    """Eigenvalues (ascending) and eigenvectors of a dense symmetric matrix."""
    M = np.asarray(M, dtype=float)
    scale = max(np.abs(M).max(initial=0.0), 1.0)
    if np.abs(M - M.T).max(initial=0.0) > SYMMETRY_TOL * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    return np.linalg.eigh(0.5 * (M + M.T))


@dataclass(frozen=True)
class SymTridiagonal:
    diag: np.ndarray
    offdiag: np.ndarray

    def __post_init__(self):
        if len(self.offdiag) != max(len(self.diag) - 1, 0):
            raise ValueError("offdiag must have length len(diag) - 1")

    def toarray(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.offdiag, 1) + np.diag(self.offdiag, -1)


def tridiag_eig(T: SymTridiagonal) -> np.ndarray:
    """Ascending eigenvalues of a symmetric tridiagonal matrix."""
    d = np.asarray(T.diag, dtype=float)
    if d.size == 0:
        return d
    e = np.asarray(T.offdiag, dtype=float)
    return sla.eigh_tridiagonal(d, e, eigvals_only=True)
