"""The XRAY loop: alternate detection and projection until ``rank`` anchors."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit, prange

from .detection import (ConeCoversData, DetectionReport, SelectionCriterion,
                        detect, exterior_mask)
from .nnls import INLOOP_MAXCYCLES, NnlsSettings, NnlsWorkspace, solve_gram_nnls
from .sparse import DEFAULT_DENSE_THRESHOLD, GramCache, SparseMatrix, gram

log = logging.getLogger(__name__)


class XrayError(ValueError):
    pass


@dataclass(frozen=True)
class XrayConfig:
    rank: int
    criterion: SelectionCriterion = field(default_factory=SelectionCriterion)
    nnls: NnlsSettings = field(default_factory=NnlsSettings)
    inloop_maxcycles: int = INLOOP_MAXCYCLES
    early_stop_tol: float = 1e-10
    refine_iters: int = 0
    improvement_threshold: float | None = None
    dense_threshold: float = DEFAULT_DENSE_THRESHOLD

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.early_stop_tol < 0 or self.refine_iters < 0:
            raise ValueError("thresholds and iteration counts must be >= 0")
        if self.improvement_threshold is not None and self.improvement_threshold < 0:
            raise ValueError("improvement_threshold must be >= 0")


@dataclass
class XrayResult:
    anchors: list[int]
    H: np.ndarray
    residual_history: list[float]
    reports: list[DetectionReport]
    W: np.ndarray | None = None  # set only after refinement; otherwise W = X[:, anchors]
    refine_history: list[float] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def objective(self) -> float:
        return self.residual_history[-1] if self.residual_history else float("nan")


def early_stop_check(res_norms_sq: np.ndarray, frob_sq: float, early_stop_tol: float) -> bool:
    """True once the residual mass is negligible or no exterior point remains."""
    if float(np.sum(res_norms_sq)) <= early_stop_tol * frob_sq:
        return True
    return not exterior_mask(res_norms_sq, frob_sq).any()


def xray_run(X: SparseMatrix, config: XrayConfig, *, gram_cache: GramCache | None = None,
             callback: Callable[[int, NnlsWorkspace], None] | None = None) -> XrayResult:
    """Select up to ``config.rank`` anchors and the matching coefficients.

    ``callback(t, ws)`` is invoked after every projection step with the live
    workspace (read-only use).
    """
    if config.rank > X.n_cols:
        raise XrayError(f"rank {config.rank} exceeds the number of columns {X.n_cols}")
    timings = {}
    t0 = time.perf_counter()
    C = gram_cache if gram_cache is not None else gram(X, config.dense_threshold)
    timings["gram"] = time.perf_counter() - t0
    if not C.frob_sq > 0:
        raise XrayError("data matrix is all zero")

    rng = np.random.default_rng(config.criterion.seed)
    inloop = NnlsSettings(config.nnls.tol, min(config.inloop_maxcycles, config.nnls.maxcycles))
    ws = NnlsWorkspace(C, config.rank)
    history: list[float] = []
    reports: list[DetectionReport] = []
    t_detect = t_project = 0.0
    thr = config.improvement_threshold

    for t in range(config.rank):
        res = ws.column_objectives() if t else C.col_l2sq.copy()
        res = np.maximum(res, 0.0)
        if t and early_stop_check(res, C.frob_sq, config.early_stop_tol):
            log.info("early stop after %d anchors", t)
            break
        s0 = time.perf_counter()
        try:
            report = detect(config.criterion, ws, C, res, rng)
        except ConeCoversData:
            break
        s1 = time.perf_counter()
        previous = ws.copy() if thr is not None else None
        ws.add_anchor(report.chosen)
        obj, cycles, _ = ws.solve(inloop)
        s2 = time.perf_counter()
        t_detect += s1 - s0
        t_project += s2 - s1
        if thr is not None and history:
            gain = (history[-1] - obj) / history[-1] if history[-1] > 0 else 0.0
            if gain < thr:
                log.info("improvement %.3g below threshold at anchor %d", gain, t + 1)
                ws = previous
                break
        history.append(obj)
        reports.append(report)
        log.info("iter %d anchor %d residual %.6g cycles %d", t + 1, report.chosen, obj, cycles)
        if callback is not None:
            callback(t, ws)

    s0 = time.perf_counter()
    if ws.r:
        obj, _, _ = ws.solve(config.nnls)
        history[-1] = obj
        if callback is not None:
            callback(len(history) - 1, ws)
    t_project += time.perf_counter() - s0
    timings["detect"] = t_detect
    timings["project"] = t_project

    result = XrayResult(list(ws.anchors), ws.B, history, reports, timings=timings)
    if config.refine_iters:
        s0 = time.perf_counter()
        W, H, hist = refine(X, result.anchors, result.H, config.refine_iters, config.nnls)
        result.W, result.H, result.refine_history = W, H, hist
        timings["refine"] = time.perf_counter() - s0
    return result


def model_select(X: SparseMatrix, config: XrayConfig, rank_max: int, *,
                 gram_cache: GramCache | None = None) -> XrayResult:
    """Grow the anchor set until one more anchor improves the residual by
    less than ``config.improvement_threshold`` (relative) or ``rank_max`` is hit.
    """
    if config.improvement_threshold is None:
        raise ValueError("model_select needs improvement_threshold")
    cfg = XrayConfig(rank_max, config.criterion, config.nnls, config.inloop_maxcycles,
                     config.early_stop_tol, config.refine_iters,
                     config.improvement_threshold, config.dense_threshold)
    return xray_run(X, cfg, gram_cache=gram_cache)


@njit(parallel=True, cache=True)
def _csc_t_dot(indptr, indices, data, M):
    # X^T M for X in CSC; row j of the result only touches column j of X
    n = len(indptr) - 1
    r = M.shape[1]
    out = np.zeros((n, r))
    for j in prange(n):
        for p in range(indptr[j], indptr[j + 1]):
            i = indices[p]
            v = data[p]
            for k in range(r):
                out[j, k] += v * M[i, k]
    return out


def refine(X: SparseMatrix, anchors, H: np.ndarray, iters: int,
           settings: NnlsSettings | None = None):
    """Alternating non-negative least squares on ``||X - W H||_F^2``.

    Starts from ``W = X[:, anchors]`` and the separable ``H``; each sweep
    re-solves H then W with the Gram-driven coordinate solver, warm
    started. Returns ``(W, H, objective_history)`` where entry 0 is the
    starting objective and entry k follows sweep k.
    """
    settings = settings or NnlsSettings()
    W = X.select_columns(anchors)
    H = np.array(H, dtype=np.float64, copy=True)
    Xt = X.transpose()
    col_l2sq = np.zeros(X.n_cols)
    np.add.at(col_l2sq, np.repeat(np.arange(X.n_cols), np.diff(X.indptr)), X.data ** 2)
    row_l2sq = np.zeros(X.n_rows)
    np.add.at(row_l2sq, X.indices, X.data ** 2)

    def objective(W, H):
        XtW = _csc_t_dot(X.indptr, X.indices, X.data, np.ascontiguousarray(W))
        return float(np.sum(col_l2sq) - 2.0 * np.sum(XtW * H.T) + np.sum((W.T @ W) * (H @ H.T)))

    history = [objective(W, H)]
    for _ in range(iters):
        Ht = np.ascontiguousarray(H.T)
        XtW = _csc_t_dot(X.indptr, X.indices, X.data, np.ascontiguousarray(W))
        solve_gram_nnls(W.T @ W, XtW, Ht, col_l2sq, settings)
        H = Ht.T.copy()
        Wc = np.ascontiguousarray(W)
        XHt = _csc_t_dot(Xt.indptr, Xt.indices, Xt.data, np.ascontiguousarray(H.T))
        obj, _, _ = solve_gram_nnls(H @ H.T, XHt, Wc, row_l2sq, settings)
        W = Wc
        history.append(obj)
    return W, H, history
