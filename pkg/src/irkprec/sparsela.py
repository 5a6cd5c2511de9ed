"""Sparse / small-dense linear algebra kernels.

CSR storage is scipy's ``csr_matrix`` kept in canonical form (sorted column
indices, no duplicates); factorizations and dense spectral routines wrap
SuperLU and LAPACK.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

CsrMatrix = sp.csr_matrix
Apply = Callable[[np.ndarray], np.ndarray]


class SingularMatrixError(ArithmeticError):
    pass


class NumericalFailure(ArithmeticError):
    def __init__(self, msg, partial=None):
        super().__init__(msg)
        self.partial = partial


def as_csr(A) -> sp.csr_matrix:
    """Canonical CSR copy of any sparse or dense input."""
    A = sp.csr_matrix(A, dtype=float, copy=True)
    A.sum_duplicates()
    A.sort_indices()
    return A


def check_csr(A: sp.csr_matrix) -> None:
    n_rows, n_cols = A.shape
    ptr, idx = A.indptr, A.indices
    if len(ptr) != n_rows + 1 or ptr[0] != 0 or ptr[-1] != len(A.data):
        raise ValueError("row_ptr inconsistent with matrix shape / nnz")
    if np.any(np.diff(ptr) < 0):
        raise ValueError("row_ptr not nondecreasing")
    if len(idx) and (idx.min() < 0 or idx.max() >= n_cols):
        raise ValueError("column index out of range")
    for r in range(n_rows):
        row = idx[ptr[r]:ptr[r + 1]]
        if np.any(np.diff(row) <= 0):
            raise ValueError(f"row {r}: column indices not strictly increasing")


class TripletBuilder:
    """Coordinate accumulator; duplicates are summed on conversion."""

    def __init__(self, n_rows: int, n_cols: int):
        self.shape = (n_rows, n_cols)
        self._rows: list[np.ndarray] = []
        self._cols: list[np.ndarray] = []
        self._vals: list[np.ndarray] = []

    def add(self, rows, cols, vals) -> None:
        self._rows.append(np.ravel(rows))
        self._cols.append(np.ravel(cols))
        self._vals.append(np.ravel(vals).astype(float))

    def add_element_blocks(self, dofs: np.ndarray, blocks: np.ndarray) -> None:
        """Scatter (n_elem, k, k) local matrices through (n_elem, k) dof maps."""
        k = dofs.shape[1]
        self.add(np.repeat(dofs, k, axis=1), np.tile(dofs, (1, k)), blocks.reshape(len(dofs), k * k))

    def to_csr(self) -> sp.csr_matrix:
        if not self._rows:
            return sp.csr_matrix(self.shape)
        coo = sp.coo_matrix(
            (np.concatenate(self._vals), (np.concatenate(self._rows), np.concatenate(self._cols))),
            shape=self.shape,
        )
        return as_csr(coo)


def spmv(A: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[0] != A.shape[1]:
        raise ValueError(f"spmv: matrix has {A.shape[1]} columns, vector has {x.shape[0]}")
    return A @ x


@dataclass(eq=False)
class SparseLu:
    n: int
    _lu: spla.SuperLU

    def solve(self, b: np.ndarray) -> np.ndarray:
        return lu_solve(self, b)


def sparse_lu_factor(A) -> SparseLu:
    """SuperLU with partial (threshold 1.0) pivoting and COLAMD ordering."""
    A = sp.csc_matrix(A, dtype=float)
    n, m = A.shape
    if n != m:
        raise ValueError("LU needs a square matrix")
    if n == 0:
        raise SingularMatrixError("empty matrix")
    try:
        lu = spla.splu(A, diag_pivot_thresh=1.0)
    except RuntimeError as exc:
        raise SingularMatrixError(str(exc)) from exc
    d = np.abs(lu.U.diagonal())
    if not np.all(np.isfinite(d)) or d.min() <= 1e-14 * max(d.max(), 1e-300):
        raise SingularMatrixError("numerically singular matrix")
    return SparseLu(n, lu)


def lu_solve(f: SparseLu, b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if b.shape[0] != f.n:
        raise ValueError(f"lu_solve: factor of size {f.n}, rhs of size {b.shape[0]}")
    return f._lu.solve(b)


def dense_eigenvalues(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("square matrix expected")
    if A.shape[0] > 10000:
        raise ValueError("dense eigen-solve capped at n = 10000")
    try:
        return scipy.linalg.eigvals(A, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigenvalue iteration failed: {exc}") from exc


def materialize(apply: Apply, n: int, chunk: int = 1024) -> np.ndarray:
    """Dense matrix of a linear operator, built column block by column block."""
    out = np.empty((n, n))
    for j0 in range(0, n, chunk):
        j1 = min(n, j0 + chunk)
        E = np.zeros((n, j1 - j0))
        E[np.arange(j0, j1), np.arange(j1 - j0)] = 1.0
        out[:, j0:j1] = apply(E)
    return out


DENSE_SVD_CAP = 8000


def condition_number_2(apply: Apply, apply_transpose: Apply, n: int, dense_cap: int = DENSE_SVD_CAP) -> float:
    """sigma_max / sigma_min; dense SVD up to ``dense_cap``, ARPACK above."""
    if n <= dense_cap:
        sv = scipy.linalg.svdvals(materialize(apply, n))
        if sv[-1] == 0.0:
            return float("inf")
        return float(sv[0] / sv[-1])
    op = spla.LinearOperator((n, n), matvec=apply, rmatvec=apply_transpose, dtype=float)
    partial = {}
    try:
        smax = spla.svds(op, k=1, which="LM", return_singular_vectors=False, random_state=0)[0]
        partial["sigma_max"] = float(smax)
        smin = spla.svds(op, k=1, which="SM", return_singular_vectors=False, random_state=0, maxiter=20 * n)[0]
    except spla.ArpackNoConvergence as exc:
        raise NumericalFailure("Lanczos bidiagonalization did not converge", partial) from exc
    return float(smax / smin)


def write_matrix_market(path: str | Path, A) -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), precision=17)


def read_matrix_market(path: str | Path) -> sp.csr_matrix:
    return as_csr(scipy.io.mmread(str(path)))
