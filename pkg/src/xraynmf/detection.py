"""Detection step: choose the next anchor from residual information.

Entries of ``R^T X = C - (C_A H)^T`` are produced on the fly and never
stored as a matrix. When C is sparse and entrywise non-negative, entries
with ``C[k, j] == 0`` are skipped for the clamped criteria since
``-(C_A H)^T[k, j] <= 0`` there.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numba import njit, prange

from .nnls import NnlsWorkspace, residual_gram_row
from .sparse import GramCache

TIE_RTOL = 1e-12
DENOM_EPS = 1e-12
EXTERIOR_EPS = 1e-10

CriterionKind = Literal["rand", "max", "dist", "greedy"]
KINDS = ("rand", "max", "dist", "greedy")


class NoCandidates(ValueError):
    """Every column is masked out of the argmax."""


class ConeCoversData(Exception):
    """No column has a residual above the exterior threshold."""


@dataclass(frozen=True)
class SelectionCriterion:
    kind: CriterionKind = "greedy"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown criterion {self.kind!r}; expected one of {KINDS}")


@dataclass
class DetectionReport:
    chosen: int
    exterior: int | None
    score: float
    ties: list[int] = field(default_factory=list)


def argmax_ties(scores: np.ndarray, mask: np.ndarray) -> tuple[int, float, list[int]]:
    """Masked argmax with relative tie tolerance; smallest index wins."""
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        raise NoCandidates("no exterior candidates")
    vals = scores[idx]
    best = float(vals.max())
    ties = idx[vals >= best - TIE_RTOL * abs(best)]
    return int(ties[0]), best, [int(t) for t in ties]


def candidate_mask_score(col_l1: np.ndarray, chosen) -> np.ndarray:
    """Columns admissible in the normalized score: not chosen, positive ``p^T x``."""
    denom_eps = DENOM_EPS * float(np.mean(np.abs(col_l1))) if len(col_l1) else 0.0
    mask = col_l1 > denom_eps
    mask[list(chosen)] = False
    return mask


def candidate_mask_greedy(col_l2sq: np.ndarray, chosen) -> np.ndarray:
    mask = col_l2sq > 0
    mask[list(chosen)] = False
    return mask


def score_eq1(residual_row: np.ndarray, col_l1: np.ndarray,
              candidate_mask: np.ndarray) -> tuple[int, DetectionReport]:
    """``argmax_j residual_row[j] / col_l1[j]`` over the candidates."""
    scores = np.full(len(residual_row), -np.inf)
    scores[candidate_mask] = residual_row[candidate_mask] / col_l1[candidate_mask]
    j, best, ties = argmax_ties(scores, candidate_mask)
    return j, DetectionReport(j, None, best, ties)


def exterior_mask(res_norms_sq: np.ndarray, frob_sq: float) -> np.ndarray:
    n = len(res_norms_sq)
    return res_norms_sq > EXTERIOR_EPS * frob_sq / max(n, 1)


def pick_exterior(kind: str, res_norms_sq: np.ndarray, frob_sq: float,
                  q_row_norms=None, rng: np.random.Generator | None = None) -> int:
    """Exterior point whose residual drives the Eq.-1 argmax.

    ``q_row_norms`` maps a boolean mask to ``||(R_k^T X)_+||^2`` per row
    (only called for ``dist``). Raises :class:`ConeCoversData` when nothing
    qualifies.
    """
    qual = exterior_mask(res_norms_sq, frob_sq)
    if not qual.any():
        raise ConeCoversData("current cone covers every column")
    if kind == "rand":
        if rng is None:
            raise ValueError("rand criterion needs a random generator")
        idx = np.flatnonzero(qual)
        return int(idx[rng.integers(len(idx))])
    if kind == "max":
        return argmax_ties(res_norms_sq, qual)[0]
    if kind == "dist":
        return argmax_ties(q_row_norms(qual), qual)[0]
    raise ValueError(f"no exterior point rule for criterion {kind!r}")


@njit(cache=True)
def _h_rows(Bt, t):
    n = Bt.shape[0]
    ptr = np.zeros(n + 1, dtype=np.int64)
    for k in range(n):
        c = 0
        for a in range(t):
            if Bt[k, a] != 0.0:
                c += 1
        ptr[k + 1] = ptr[k] + c
    idx = np.empty(ptr[n], dtype=np.int64)
    val = np.empty(ptr[n], dtype=np.float64)
    for k in range(n):
        p = ptr[k]
        for a in range(t):
            b = Bt[k, a]
            if b != 0.0:
                idx[p] = a
                val[p] = b
                p += 1
    return ptr, idx, val


@njit(cache=True)
def _rq(k, j, ckj, hptr, hidx, hval, CAt):
    # (R^T X)[k, j] = C[k, j] - sum_a H[a, k] C[A_a, j]
    acc = 0.0
    for p in range(hptr[k], hptr[k + 1]):
        acc += hval[p] * CAt[j, hidx[p]]
    return ckj - acc


@njit(parallel=True, cache=True)
def _dense_scores(outer_mask, C, CAt, hptr, hidx, hval, by_row):
    # by_row: sum over j of (R^T X)[o, j]_+^2 ; else sum over k of (R^T X)[k, o]_+^2
    n = C.shape[0]
    out = np.zeros(n)
    for o in prange(n):
        if not outer_mask[o]:
            continue
        acc = 0.0
        for q in range(n):
            if by_row:
                v = _rq(o, q, C[o, q], hptr, hidx, hval, CAt)
            else:
                v = _rq(q, o, C[q, o], hptr, hidx, hval, CAt)
            if v > 0.0:
                acc += v * v
        out[o] = acc
    return out


@njit(parallel=True, cache=True)
def _sparse_scores(outer_mask, cptr, cidx, cval, CAt, hptr, hidx, hval, by_row):
    # C symmetric: column o of C lists both row o and column o.
    n = len(cptr) - 1
    out = np.zeros(n)
    for o in prange(n):
        if not outer_mask[o]:
            continue
        acc = 0.0
        for p in range(cptr[o], cptr[o + 1]):
            q = cidx[p]
            if by_row:
                v = _rq(o, q, cval[p], hptr, hidx, hval, CAt)
            else:
                v = _rq(q, o, cval[p], hptr, hidx, hval, CAt)
            if v > 0.0:
                acc += v * v
        out[o] = acc
    return out


def clamped_q_sums(ws: NnlsWorkspace, C: GramCache, mask: np.ndarray, by_row: bool) -> np.ndarray:
    """Squared norms of rows (``by_row``) or columns of ``(R^T X)_+``.

    Entries outside ``mask`` are returned as 0.
    """
    hptr, hidx, hval = _h_rows(ws._Bt, ws.r)
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    if C.is_dense:
        return _dense_scores(mask, C.dense, ws._CAt, hptr, hidx, hval, by_row)
    if C.nonneg:
        S = C.sparse
        return _sparse_scores(mask, S.indptr, S.indices, S.data, ws._CAt,
                              hptr, hidx, hval, by_row)
    # mixed-sign sparse C: zero entries of C can still give positive residual products
    return _dense_scores(mask, C.to_dense(), ws._CAt, hptr, hidx, hval, by_row)


def greedy_select(ws: NnlsWorkspace, C: GramCache,
                  candidate_mask: np.ndarray) -> tuple[int, DetectionReport]:
    """``argmax_j ||(R^T x_j)_+||^2 / ||x_j||^2`` over the candidates."""
    if not candidate_mask.any():
        raise NoCandidates("no candidate columns for greedy selection")
    sums = clamped_q_sums(ws, C, candidate_mask, by_row=False)
    scores = np.full(C.n, -np.inf)
    scores[candidate_mask] = sums[candidate_mask] / C.col_l2sq[candidate_mask]
    j, best, ties = argmax_ties(scores, candidate_mask)
    return j, DetectionReport(j, None, best, ties)


def detect(criterion: SelectionCriterion, ws: NnlsWorkspace, C: GramCache,
           res_norms_sq: np.ndarray, rng: np.random.Generator | None = None) -> DetectionReport:
    """Run one detection step for ``criterion`` against the current workspace."""
    if criterion.kind == "greedy":
        if not exterior_mask(res_norms_sq, C.frob_sq).any():
            raise ConeCoversData("current cone covers every column")
        mask = candidate_mask_greedy(C.col_l2sq, ws.anchors)
        return greedy_select(ws, C, mask)[1]
    i = pick_exterior(criterion.kind, res_norms_sq, C.frob_sq,
                      q_row_norms=lambda m: clamped_q_sums(ws, C, m, by_row=True),
                      rng=rng)
    row = residual_gram_row(ws, C, i)
    mask = candidate_mask_score(C.col_l1, ws.anchors)
    _, report = score_eq1(row, C.col_l1, mask)
    report.exterior = i
    return report
