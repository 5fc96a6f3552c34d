"""Sparse/dense linear algebra substrate.

Symmetric matrices are stored as the upper triangle in sorted COO form;
every consumer sees the full symmetric operator.  Factorizations go dense
below a size cutoff (correctness-first, oracle-checkable) and switch to a
sparse LU above it; the contract is the solve tolerance, not the algorithm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DimensionMismatchError, NotSPDError

DENSE_FACTOR_LIMIT = 5000


@dataclass
class Tolerances:
    """Global tolerance table. Mutate ``EPS`` fields to retune globally."""

    spd_solve: float = 1e-10      # factor/solve round-trip, relative to ||b||
    eig_residual: float = 1e-8    # generalized eigenpair residual scale
    kernel_cut: float = 1e-10     # |lam| < cut * lam_max counts as kernel
    orthonormal: float = 1e-8     # basis orthonormality checks
    coarse_drop: float = 1e-10    # pivoted-QR coarse column dropping
    symmetry: float = 1e-10       # operator symmetry checks
    dist_clamp: float = 1e-10     # pre-clamp negative excess worth flagging


EPS = Tolerances()


class SymSparseMatrix:
    """Symmetric real matrix stored as its upper triangle in COO form.

    Entries are (row, col, value) with row <= col, sorted row-major, no
    duplicates, no explicit zeros.  ``rows``/``cols``/``vals`` are the
    parallel numpy arrays backing the entry list.
    """

    __slots__ = ("n", "rows", "cols", "vals", "_csr")

    def __init__(self, n, rows, cols, vals, _presorted=False):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if not (rows.shape == cols.shape == vals.shape):
            raise DimensionMismatchError("rows/cols/vals length mismatch")
        if rows.size and (rows.min() < 0 or cols.min() < 0
                          or rows.max() >= n or cols.max() >= n):
            raise IndexError("matrix entry index out of range [0, n)")
        # canonicalize to the upper triangle
        swap = rows > cols
        if swap.any():
            rows = rows.copy()
            cols = cols.copy()
            rows[swap], cols[swap] = cols[swap], rows[swap]
        keep = vals != 0.0
        if not keep.all():
            rows, cols, vals = rows[keep], cols[keep], vals[keep]
        if not _presorted:
            order = np.lexsort((cols, rows))
            rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size:
            dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
            if dup.any():
                k = int(np.flatnonzero(dup)[0])
                raise ValueError(
                    f"duplicate entry at ({rows[k]}, {cols[k]})")
        self.n = int(n)
        self.rows = rows
        self.cols = cols
        self.vals = vals
        self._csr = None

    # -- constructors -------------------------------------------------

    @classmethod
    def from_dense(cls, M, tol=0.0):
        M = np.asarray(M, dtype=np.float64)
        n = M.shape[0]
        if M.shape != (n, n):
            raise DimensionMismatchError("dense input must be square")
        iu, ju = np.triu_indices(n)
        v = M[iu, ju]
        keep = np.abs(v) > tol
        return cls(n, iu[keep], ju[keep], v[keep], _presorted=True)

    @classmethod
    def identity(cls, n, scale=1.0):
        idx = np.arange(n)
        return cls(n, idx, idx, np.full(n, scale), _presorted=True)

    # -- views ---------------------------------------------------------

    @property
    def nnz_stored(self):
        return self.vals.size

    @property
    def nnz_full(self):
        """Nonzero count of the full symmetric matrix."""
        off = int(np.count_nonzero(self.rows != self.cols))
        return self.vals.size + off

    def entries(self):
        """Iterate stored (row, col, value) triples in storage order."""
        return zip(self.rows.tolist(), self.cols.tolist(), self.vals.tolist())

    def to_csr(self):
        """Full symmetric matrix as scipy CSR (cached)."""
        if self._csr is None:
            off = self.rows != self.cols
            r = np.concatenate([self.rows, self.cols[off]])
            c = np.concatenate([self.cols, self.rows[off]])
            v = np.concatenate([self.vals, self.vals[off]])
            self._csr = sp.csr_matrix((v, (r, c)), shape=(self.n, self.n))
        return self._csr

    def to_dense(self):
        return self.to_csr().toarray()

    def norm_max(self):
        return float(np.abs(self.vals).max()) if self.vals.size else 0.0

    def diagonal(self):
        d = np.zeros(self.n)
        on = self.rows == self.cols
        d[self.rows[on]] = self.vals[on]
        return d

    # -- operations ----------------------------------------------------

    def matvec(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.n:
            raise DimensionMismatchError(
                f"matvec: len(x)={x.shape[0]} but n={self.n}")
        return self.to_csr() @ x

    __matmul__ = matvec

    def scaled(self, c):
        return SymSparseMatrix(self.n, self.rows, self.cols, c * self.vals,
                               _presorted=True)


def matvec(A, x):
    """y = A x with symmetric expansion of the stored upper triangle."""
    return A.matvec(x)


def extract_principal_submatrix(A, idx):
    """Principal submatrix A[idx, idx] as a new SymSparseMatrix.

    ``idx`` must be strictly increasing so local index order matches the
    global order (restriction operators rely on this).
    """
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (np.diff(idx) <= 0).any():
        raise ValueError("index set must be strictly increasing")
    if idx.size and (idx[0] < 0 or idx[-1] >= A.n):
        raise IndexError("submatrix index out of range")
    lookup = np.full(A.n, -1, dtype=np.int64)
    lookup[idx] = np.arange(idx.size)
    li = lookup[A.rows]
    lj = lookup[A.cols]
    keep = (li >= 0) & (lj >= 0)
    return SymSparseMatrix(idx.size, li[keep], lj[keep], A.vals[keep],
                           _presorted=True)


class SpdSolver:
    """Factorization handle; solve() accepts vector or matrix right sides."""

    def __init__(self, A):
        self.n = A.n
        if A.n <= DENSE_FACTOR_LIMIT:
            dense = A.to_dense()
            c, info = sla.lapack.dpotrf(dense, lower=1)
            if info > 0:
                raise NotSPDError(
                    f"non-positive pivot at index {info - 1}",
                    pivot=info - 1)
            if info < 0:
                raise ValueError(f"illegal dpotrf argument {-info}")
            self._chol = c
            self._lu = None
        else:
            try:
                self._lu = spla.splu(A.to_csr().tocsc())
            except RuntimeError as exc:  # singular factor
                raise NotSPDError(f"sparse factorization failed: {exc}")
            self._chol = None

    def solve(self, b):
        b = np.asarray(b, dtype=np.float64)
        if b.shape[0] != self.n:
            raise DimensionMismatchError(
                f"solve: len(b)={b.shape[0]} but n={self.n}")
        if self._chol is not None:
            x, info = sla.lapack.dpotrs(self._chol, b, lower=1)
            if info != 0:
                raise ValueError(f"dpotrs failed with info={info}")
            return x
        if b.ndim == 1:
            return self._lu.solve(b)
        return np.column_stack([self._lu.solve(b[:, j])
                                for j in range(b.shape[1])])


def factor_spd(A):
    """Factor a symmetric positive definite matrix; raises NotSPDError."""
    return SpdSolver(A)


def solve(handle, b):
    return handle.solve(b)


@dataclass
class EigResult:
    """Generalized eigendecomposition, eigenvalues descending.

    Column k of ``eigenvectors`` pairs with ``eigenvalues[k]``; the
    vectors are B-orthonormal.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def dense_generalized_eig(A, B):
    """Solve A v = lambda B v for symmetric A and SPD B.

    Returns descending eigenvalues with B-orthonormal eigenvectors.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape or A.shape[0] != A.shape[1]:
        raise DimensionMismatchError("A and B must be square with equal shape")
    try:
        w, V = sla.eigh(A, B)
    except sla.LinAlgError as exc:
        raise NotSPDError(f"B is not positive definite: {exc}")
    return EigResult(eigenvalues=w[::-1].copy(),
                     eigenvectors=V[:, ::-1].copy())


def dense_sym_eig(M):
    """Eigendecomposition of a symmetric matrix, descending eigenvalues."""
    w, V = sla.eigh(np.asarray(M, dtype=np.float64))
    return w[::-1].copy(), V[:, ::-1].copy()
