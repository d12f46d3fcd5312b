"""Compressed sparse-column storage, the Gram matrix ``C = X^T X`` and column norms.

Everything here is built once per data matrix and shared read-only by the
projection and detection steps.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from numba import get_num_threads, njit, prange

DEFAULT_DENSE_THRESHOLD = 0.25


class TripleIndexError(ValueError):
    """Raised when a coordinate triple falls outside the declared shape."""


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Real ``n_rows x n_cols`` matrix in canonical CSC form.

    Row indices are strictly increasing within a column and no explicit
    zeros are stored. Treat instances as immutable.
    """

    n_rows: int
    n_cols: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    def column(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.indptr[j], self.indptr[j + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        cols = np.repeat(np.arange(self.n_cols), np.diff(self.indptr))
        out[self.indices, cols] = self.data
        return out

    def to_triples(self) -> list[tuple[int, int, float]]:
        cols = np.repeat(np.arange(self.n_cols), np.diff(self.indptr))
        return [(int(i), int(j), float(v)) for i, j, v in zip(self.indices, cols, self.data)]

    def transpose(self) -> "SparseMatrix":
        """CSC of the transpose, i.e. the CSR arrays of this matrix."""
        cols = np.repeat(np.arange(self.n_cols, dtype=np.int64), np.diff(self.indptr))
        order = np.argsort(self.indices, kind="stable")
        counts = np.bincount(self.indices, minlength=self.n_rows)
        indptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        return SparseMatrix(self.n_cols, self.n_rows, indptr,
                            cols[order], self.data[order].copy())

    def select_columns(self, cols: Iterable[int]) -> np.ndarray:
        """Dense ``n_rows x len(cols)`` block, e.g. ``W = X_A``."""
        cols = list(cols)
        out = np.zeros((self.n_rows, len(cols)))
        for c, j in enumerate(cols):
            rows, vals = self.column(j)
            out[rows, c] = vals
        return out

    def check(self) -> None:
        """Raise ``ValueError`` if the canonical-form invariants are broken."""
        if len(self.indptr) != self.n_cols + 1 or self.indptr[0] != 0:
            raise ValueError("bad column pointer length")
        if np.any(np.diff(self.indptr) < 0):
            raise ValueError("column pointers decrease")
        if self.indptr[-1] != len(self.indices) or len(self.indices) != len(self.data):
            raise ValueError("final column pointer does not equal nnz")
        if np.any(self.data == 0):
            raise ValueError("explicit zero stored")
        if self.nnz and (self.indices.min() < 0 or self.indices.max() >= self.n_rows):
            raise ValueError("row index out of range")
        for j in range(self.n_cols):
            rows, _ = self.column(j)
            if np.any(np.diff(rows) <= 0):
                raise ValueError(f"row indices not strictly increasing in column {j}")

    @classmethod
    def from_dense(cls, a) -> "SparseMatrix":
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError("expected a 2-d array")
        rows, cols = np.nonzero(a.T)  # column-major order
        return _from_sorted(a.shape[0], a.shape[1], cols, rows, a[cols, rows])

    @classmethod
    def empty(cls, m: int, n: int) -> "SparseMatrix":
        return cls(m, n, np.zeros(n + 1, dtype=np.int64),
                   np.zeros(0, dtype=np.int64), np.zeros(0))


def _from_sorted(m, n, rows, cols, vals) -> SparseMatrix:
    counts = np.bincount(cols, minlength=n)
    indptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
    return SparseMatrix(int(m), int(n), indptr, np.asarray(rows, dtype=np.int64),
                        np.asarray(vals, dtype=np.float64))


def build_sparse(triples, m: int, n: int) -> SparseMatrix:
    """Canonical CSC matrix from ``(row, col, value)`` triples.

    Duplicate coordinates are summed; entries summing to exactly zero are
    dropped.

    >>> build_sparse([(0, 0, 1.0), (1, 1, 2.0)], 2, 2).nnz
    2
    """
    arr = np.asarray(list(triples), dtype=np.float64).reshape(-1, 3)
    rows = arr[:, 0].astype(np.int64)
    cols = arr[:, 1].astype(np.int64)
    vals = arr[:, 2]
    bad = (rows < 0) | (rows >= m) | (cols < 0) | (cols >= n) \
        | (rows != arr[:, 0]) | (cols != arr[:, 1])
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        what = "row" if not (0 <= arr[k, 0] < m) else "column"
        raise TripleIndexError(
            f"{what} index out of range in triple {tuple(arr[k])} for shape ({m}, {n})")
    return _canonicalize(m, n, rows, cols, vals)


def _canonicalize(m, n, rows, cols, vals) -> SparseMatrix:
    if len(vals) == 0:
        return SparseMatrix.empty(m, n)
    order = np.lexsort((rows, cols))
    rows, cols, vals = rows[order], cols[order], vals[order]
    key_change = np.ones(len(rows), dtype=bool)
    key_change[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
    starts = np.flatnonzero(key_change)
    summed = np.add.reduceat(vals, starts)
    rows, cols = rows[starts], cols[starts]
    keep = summed != 0
    return _from_sorted(m, n, rows[keep], cols[keep], summed[keep])


@dataclass(frozen=True, eq=False)
class GramCache:
    """``C = X^T X`` plus the column statistics derived from it.

    ``dense`` holds C as an ndarray when its density reaches the threshold,
    otherwise ``sparse`` holds it in CSC form (symmetric, so column i is
    also row i).
    """

    n: int
    dense: np.ndarray | None
    sparse: SparseMatrix | None
    col_l1: np.ndarray
    col_l2sq: np.ndarray
    frob_sq: float
    nonneg: bool  # every entry of C is >= 0

    @property
    def is_dense(self) -> bool:
        return self.dense is not None

    @property
    def nnz(self) -> int:
        if self.dense is not None:
            return int(np.count_nonzero(self.dense))
        return self.sparse.nnz

    @property
    def density(self) -> float:
        return self.nnz / float(self.n * self.n) if self.n else 0.0

    def to_dense(self) -> np.ndarray:
        return self.dense if self.dense is not None else self.sparse.to_dense()


@njit(cache=True)
def _chunk_bounds(n, nchunks):
    bounds = np.empty(nchunks + 1, dtype=np.int64)
    for c in range(nchunks + 1):
        bounds[c] = (n * c) // nchunks
    return bounds


@njit(parallel=True, cache=True)
def _gram_counts(n, indptr, indices, rptr, rcols, nchunks):
    counts = np.zeros(n, dtype=np.int64)
    bounds = _chunk_bounds(n, nchunks)
    for c in prange(nchunks):
        mark = np.full(n, -1, dtype=np.int64)
        for j in range(bounds[c], bounds[c + 1]):
            cnt = 0
            for p in range(indptr[j], indptr[j + 1]):
                i = indices[p]
                for q in range(rptr[i], rptr[i + 1]):
                    k = rcols[q]
                    if mark[k] != j:
                        mark[k] = j
                        cnt += 1
            counts[j] = cnt
    return counts


@njit(parallel=True, cache=True)
def _gram_fill(n, indptr, indices, data, rptr, rcols, rvals, cptr, nchunks):
    # Column j of C scatters x_ij * X[i, :] over the rows i of column j in
    # increasing i, so C[k, j] and C[j, k] see identical terms in identical order.
    cidx = np.empty(cptr[n], dtype=np.int64)
    cval = np.empty(cptr[n], dtype=np.float64)
    bounds = _chunk_bounds(n, nchunks)
    for c in prange(nchunks):
        mark = np.full(n, -1, dtype=np.int64)
        acc = np.zeros(n, dtype=np.float64)
        for j in range(bounds[c], bounds[c + 1]):
            base = cptr[j]
            cnt = 0
            for p in range(indptr[j], indptr[j + 1]):
                i = indices[p]
                v = data[p]
                for q in range(rptr[i], rptr[i + 1]):
                    k = rcols[q]
                    if mark[k] != j:
                        mark[k] = j
                        cidx[base + cnt] = k
                        cnt += 1
                    acc[k] += rvals[q] * v
            seg = np.sort(cidx[base:base + cnt])
            for t in range(cnt):
                k = seg[t]
                cidx[base + t] = k
                cval[base + t] = acc[k]
                acc[k] = 0.0
    return cidx, cval


def gram(X: SparseMatrix, dense_threshold: float = DEFAULT_DENSE_THRESHOLD) -> GramCache:
    """One-time computation of ``C = X^T X`` and the column norms.

    Parallel over output columns of C; each entry is an inner product of two
    fixed columns accumulated in row order, so the result is bit-identical
    for any thread count and exactly symmetric.
    """
    n = X.n_cols
    if n == 0:
        return GramCache(0, None, SparseMatrix.empty(0, 0), np.zeros(0), np.zeros(0), 0.0, True)
    Xt = X.transpose()
    nchunks = max(1, min(n, 4 * get_num_threads()))
    counts = _gram_counts(n, X.indptr, X.indices, Xt.indptr, Xt.indices, nchunks)
    cptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
    cidx, cval = _gram_fill(n, X.indptr, X.indices, X.data,
                            Xt.indptr, Xt.indices, Xt.data, cptr, nchunks)
    keep = cval != 0
    if not np.all(keep):
        cols = np.repeat(np.arange(n), counts)[keep]
        cidx, cval = cidx[keep], cval[keep]
        cptr = np.concatenate(([0], np.cumsum(np.bincount(cols, minlength=n)))).astype(np.int64)
    C = SparseMatrix(n, n, cptr, cidx, cval)

    col_l1 = np.zeros(n)
    np.add.at(col_l1, np.repeat(np.arange(n), np.diff(X.indptr)), X.data)
    col_l2sq = _diag(C)
    frob_sq = float(np.sum(col_l2sq))
    nonneg = bool(np.all(C.data >= 0))
    if C.nnz / float(n * n) >= dense_threshold:
        return GramCache(n, C.to_dense(), None, col_l1, col_l2sq, frob_sq, nonneg)
    return GramCache(n, None, C, col_l1, col_l2sq, frob_sq, nonneg)


def _diag(C: SparseMatrix) -> np.ndarray:
    d = np.zeros(C.n_cols)
    for j in range(C.n_cols):
        rows, vals = C.column(j)
        pos = np.searchsorted(rows, j)
        if pos < len(rows) and rows[pos] == j:
            d[j] = vals[pos]
    return d


def gram_rows(C: GramCache, indices) -> np.ndarray:
    """Dense ``len(indices) x n`` block of rows of C, order preserved."""
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    if C.dense is not None:
        return C.dense[indices, :].copy()
    out = np.zeros((len(indices), C.n))
    for r, i in enumerate(indices):
        cols, vals = C.sparse.column(int(i))
        out[r, cols] = vals
    return out
