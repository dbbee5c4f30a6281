"""Compressed sparse row matrices for neighbourhood aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    """Operand shapes do not conform."""


@dataclass(frozen=True, eq=False)
class SparseCSR:
    """Immutable CSR matrix with sorted, duplicate-free column indices per row.

    The multiply itself is delegated to :mod:`scipy.sparse`; this class owns the
    structural invariants and the transpose needed for gradients.
    """

    rows: int
    cols: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        indptr = np.asarray(self.indptr, dtype=np.int64)
        indices = np.asarray(self.indices, dtype=np.int64)
        data = np.asarray(self.data, dtype=np.float64)
        if indptr.shape != (self.rows + 1,):
            raise ShapeError(f"indptr must have length rows+1={self.rows + 1}, got {indptr.shape}")
        if indptr[0] != 0 or np.any(np.diff(indptr) < 0) or indptr[-1] != len(indices):
            raise ValueError("indptr must be nondecreasing from 0 to nnz")
        if len(data) != len(indices):
            raise ShapeError("data and indices differ in length")
        if len(indices) and (indices.min() < 0 or indices.max() >= self.cols):
            raise ValueError(f"column index out of range [0, {self.cols})")
        if len(indices) > 1:
            same_row = np.ones(len(indices) - 1, dtype=bool)
            starts = indptr[1:-1]
            starts = starts[(starts > 0) & (starts < len(indices))]
            same_row[starts - 1] = False
            bad = same_row & (np.diff(indices) <= 0)
            if bad.any():
                r = int(np.searchsorted(indptr, np.argmax(bad), side="right") - 1)
                raise ValueError(f"row {r}: column indices must be strictly increasing")
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "data", data)
        object.__setattr__(
            self, "_mat", sp.csr_matrix((data, indices, indptr), shape=(self.rows, self.cols))
        )

    @classmethod
    def from_coo(cls, rows, cols, row_idx, col_idx, values) -> SparseCSR:
        """Build from coordinate triplets; duplicate coordinates are rejected."""
        row_idx = np.asarray(row_idx, dtype=np.int64)
        col_idx = np.asarray(col_idx, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        order = np.lexsort((col_idx, row_idx))
        row_idx, col_idx, values = row_idx[order], col_idx[order], values[order]
        if len(row_idx) > 1:
            dup = (np.diff(row_idx) == 0) & (np.diff(col_idx) == 0)
            if dup.any():
                k = int(np.argmax(dup))
                raise ValueError(f"duplicate entry ({row_idx[k]}, {col_idx[k]})")
        indptr = np.zeros(rows + 1, dtype=np.int64)
        np.add.at(indptr, row_idx + 1, 1)
        return cls(rows, cols, np.cumsum(indptr), col_idx, values)

    @classmethod
    def identity(cls, n: int) -> SparseCSR:
        idx = np.arange(n)
        return cls(n, n, np.arange(n + 1), idx, np.ones(n))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def nnz(self) -> int:
        return len(self.indices)

    def transpose(self) -> SparseCSR:
        cached = self.__dict__.get("_transpose")
        if cached is None:
            t = self._mat.T.tocsr()
            t.sort_indices()
            cached = SparseCSR(self.cols, self.rows, t.indptr, t.indices, t.data)
            object.__setattr__(self, "_transpose", cached)
        return cached

    def to_dense(self) -> np.ndarray:
        return self._mat.toarray()

    def to_scipy(self) -> sp.csr_matrix:
        return self._mat.copy()

    def row_sums(self) -> np.ndarray:
        return np.asarray(self._mat.sum(axis=1)).ravel()

    def dot(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.cols:
            raise ShapeError(f"cannot multiply {self.shape} by {x.shape}")
        return np.asarray(self._mat @ x)
