"""Projection onto the current cone: ``min_{B >= 0} ||X - X_A B||_F^2``.

Cyclic coordinate descent driven entirely by Gram quantities:
``S = C[A, A]``, ``CA = C[A, :]`` and the running product ``U = B^T S``.
The problem separates over the columns of B, so every kernel below runs
one independent coordinate sweep per column in parallel.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from .sparse import GramCache, gram_rows

INLOOP_MAXCYCLES = 20


class NnlsError(ValueError):
    pass


@dataclass(frozen=True)
class NnlsSettings:
    tol: float = 1e-10
    maxcycles: int = 100
    polish: bool = True  # exact solve on the positive support after each sweep

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.maxcycles < 1:
            raise ValueError("maxcycles must be >= 1")


@dataclass
class NnlsResult:
    B: np.ndarray
    objective: float
    cycles: int
    history: list[float] = field(default_factory=list)


@njit(cache=True)
def _chol_solve(S, rhs, F, f, L, x):
    for a in range(f):
        for b in range(a + 1):
            acc = S[F[a], F[b]]
            for k in range(b):
                acc -= L[a, k] * L[b, k]
            if a == b:
                if acc <= 1e-14 * S[F[a], F[a]]:
                    return False
                L[a, a] = np.sqrt(acc)
            else:
                L[a, b] = acc / L[b, b]
    for a in range(f):
        acc = rhs[F[a]]
        for k in range(a):
            acc -= L[a, k] * x[k]
        x[a] = acc / L[a, a]
    for a in range(f - 1, -1, -1):
        acc = x[a]
        for k in range(a + 1, f):
            acc -= L[k, a] * x[k]
        x[a] = acc / L[a, a]
    return True


@njit(cache=True)
def _support_solve(S, CAt, Bt, U, t, j, F, L, x):
    # Lawson-Hanson inner loop on the support {i : b_i > 0}: solve the
    # unconstrained problem there, step toward it until a coordinate hits
    # zero, drop that coordinate and repeat. Every step stays feasible and
    # does not increase the objective.
    f = 0
    for i in range(t):
        if Bt[j, i] > 0.0:
            F[f] = i
            f += 1
    changed = False
    rhs = CAt[j]
    while f > 0:
        if not _chol_solve(S, rhs, F, f, L, x):
            break
        alpha = 1.0
        drop = -1
        for a in range(f):
            if x[a] <= 0.0:
                b = Bt[j, F[a]]
                step = b / (b - x[a])
                if drop < 0 or step < alpha:
                    alpha = step
                    drop = a
        g = 0
        for a in range(f):
            i = F[a]
            b = Bt[j, i] + alpha * (x[a] - Bt[j, i])
            if a == drop or b < 0.0:
                b = 0.0
            Bt[j, i] = b
            if b > 0.0:
                F[g] = i
                g += 1
        changed = True
        if drop < 0:
            break
        f = g
    if changed:
        for k in range(t):
            acc = 0.0
            for i in range(t):
                b = Bt[j, i]
                if b != 0.0:
                    acc += b * S[i, k]
            U[j, k] = acc
    return changed


@njit(parallel=True, cache=True)
def _cd_cycle(S, CAt, Bt, U, t, active, polish):
    n = Bt.shape[0]
    for j in prange(n):
        if not active[j]:
            continue
        moved = False
        for i in range(t):
            s = S[i, i]
            old = Bt[j, i]
            new = 0.0
            if s > 0.0:
                new = (CAt[j, i] - (U[j, i] - s * old)) / s
                if new < 0.0:
                    new = 0.0
            d = new - old
            if d != 0.0:
                for k in range(t):
                    U[j, k] += d * S[i, k]
                Bt[j, i] = new
                moved = True
        if polish and moved:
            F = np.empty(t, dtype=np.int64)
            L = np.empty((t, t))
            x = np.empty(t)
            _support_solve(S, CAt, Bt, U, t, j, F, L, x)
        active[j] = moved


@njit(parallel=True, cache=True)
def _col_objectives(diag, CAt, Bt, U, t, out):
    # ||x_j - X_A b_j||^2 = C_jj + sum_i (U_ji - 2 CA_ij) b_ij
    n = Bt.shape[0]
    for j in prange(n):
        acc = diag[j]
        for i in range(t):
            b = Bt[j, i]
            if b != 0.0:
                acc += (U[j, i] - 2.0 * CAt[j, i]) * b
        out[j] = acc


@njit(parallel=True, cache=True)
def _fill_U(S, Bt, U, t, lo, hi):
    n = Bt.shape[0]
    for j in prange(n):
        for k in range(lo, hi):
            U[j, k] = 0.0
        for i in range(t):
            b = Bt[j, i]
            if b != 0.0:
                for k in range(lo, hi):
                    U[j, k] += b * S[i, k]


@njit(parallel=True, cache=True)
def _minus_combination(row, Bt_i, CAt, t, out):
    n = CAt.shape[0]
    for j in prange(n):
        acc = 0.0
        for a in range(t):
            b = Bt_i[a]
            if b != 0.0:
                acc += b * CAt[j, a]
        out[j] = row[j] - acc


def _run_cycles(S, CAt, Bt, U, diag, t, settings, active=None):
    """Sweep until the objective change per cycle drops below tol."""
    n = Bt.shape[0]
    if active is None:
        active = np.ones(n, dtype=np.bool_)
    per_col = np.empty(n)
    _col_objectives(diag, CAt, Bt, U, t, per_col)
    obj = float(np.sum(per_col))
    history = [obj]
    cycles = 0
    while cycles < settings.maxcycles:
        _cd_cycle(S, CAt, Bt, U, t, active, settings.polish)
        cycles += 1
        _col_objectives(diag, CAt, Bt, U, t, per_col)
        new = float(np.sum(per_col))
        history.append(new)
        done = abs(obj - new) < settings.tol * (1.0 + abs(new)) or not active.any()
        obj = new
        if done:
            break
    return obj, cycles, history


def solve_gram_nnls(S, CAt, Bt, diag, settings: NnlsSettings):
    """Solve ``min_{B >= 0} sum_j (diag_j - 2 CA_j^T b_j + b_j^T S b_j)`` in place.

    Generic form used when the Gram blocks do not come from a
    :class:`GramCache` (the alternating refinement). ``Bt`` is the
    ``n x r`` transpose of B and is updated in place. A coordinate whose
    ``S_ii`` is zero is pinned to 0.
    """
    S = np.ascontiguousarray(S, dtype=np.float64)
    CAt = np.ascontiguousarray(CAt, dtype=np.float64)
    t = S.shape[0]
    U = np.empty_like(Bt)
    _fill_U(S, Bt, U, t, 0, t)
    return _run_cycles(S, CAt, Bt, U, np.asarray(diag, dtype=np.float64), t, settings)


class NnlsWorkspace:
    """State carried between projection steps.

    Buffers are allocated once at ``capacity`` anchors; the first ``r``
    columns of ``Bt``, ``U`` and ``CAt`` (each ``n x capacity``) and the
    leading ``r x r`` block of ``S`` are live.
    """

    def __init__(self, C: GramCache, capacity: int):
        n = C.n
        self.C = C
        self.capacity = capacity
        self.anchors: list[int] = []
        self._S = np.zeros((capacity, capacity))
        self._CAt = np.zeros((n, capacity))
        self._Bt = np.zeros((n, capacity))
        self._U = np.zeros((n, capacity))
        self._active = np.ones(n, dtype=np.bool_)

    @classmethod
    def from_anchors(cls, C: GramCache, anchors, warm_start=None) -> "NnlsWorkspace":
        anchors = [int(a) for a in anchors]
        if len(set(anchors)) != len(anchors):
            raise NnlsError(f"anchor indices are not distinct: {anchors}")
        ws = cls(C, max(1, len(anchors)))
        for a in anchors:
            ws.add_anchor(a)
        if warm_start is not None:
            B0 = np.asarray(warm_start, dtype=np.float64)
            if B0.shape != (len(anchors), C.n):
                raise NnlsError(f"warm start has shape {B0.shape}, expected {(len(anchors), C.n)}")
            if not np.all(np.isfinite(B0)):
                raise NnlsError("warm start contains non-finite values")
            if np.any(B0 < 0):
                raise NnlsError("warm start must be non-negative")
            r = len(anchors)
            ws._Bt[:, :r] = B0.T
            _fill_U(ws._S, ws._Bt, ws._U, r, 0, r)
        return ws

    @property
    def r(self) -> int:
        return len(self.anchors)

    @property
    def S(self) -> np.ndarray:
        return self._S[:self.r, :self.r]

    @property
    def s(self) -> np.ndarray:
        return np.diag(self.S).copy()

    @property
    def B(self) -> np.ndarray:
        return self._Bt[:, :self.r].T.copy()

    @property
    def Bt(self) -> np.ndarray:
        return self._Bt[:, :self.r]

    @property
    def U(self) -> np.ndarray:
        return self._U[:, :self.r]

    @property
    def CA(self) -> np.ndarray:
        return self._CAt[:, :self.r].T

    def add_anchor(self, a: int) -> None:
        """Append anchor ``a`` with a zero coefficient row (the warm start)."""
        C = self.C
        a = int(a)
        if not 0 <= a < C.n:
            raise NnlsError(f"anchor index {a} outside [0, {C.n})")
        if a in self.anchors:
            raise NnlsError(f"anchor {a} already selected")
        if not C.col_l2sq[a] > 0:
            raise NnlsError(f"column {a} is zero and cannot be an anchor")
        if self.r == self.capacity:
            self._grow(max(2 * self.capacity, 1))
        t = self.r
        row = gram_rows(C, [a])[0]
        if not np.all(np.isfinite(row)):
            raise NnlsError(f"non-finite Gram entries in column {a}")
        self._CAt[:, t] = row
        for i, b in enumerate(self.anchors):
            self._S[i, t] = self._S[t, i] = row[b]
        self._S[t, t] = row[a]
        self.anchors.append(a)
        self._Bt[:, t] = 0.0
        _fill_U(self._S, self._Bt, self._U, t + 1, t, t + 1)
        self._active[:] = True

    def _grow(self, capacity: int) -> None:
        n = self.C.n
        for name in ("_CAt", "_Bt", "_U"):
            old = getattr(self, name)
            new = np.zeros((n, capacity))
            new[:, :self.capacity] = old
            setattr(self, name, new)
        S = np.zeros((capacity, capacity))
        S[:self.capacity, :self.capacity] = self._S
        self._S = S
        self.capacity = capacity

    def column_objectives(self) -> np.ndarray:
        out = np.empty(self.C.n)
        _col_objectives(self.C.col_l2sq, self._CAt, self._Bt, self._U, self.r, out)
        return out

    def objective(self) -> float:
        return float(np.sum(self.column_objectives()))

    def cycle(self) -> None:
        self._active[:] = True
        _cd_cycle(self._S, self._CAt, self._Bt, self._U, self.r, self._active, False)

    def solve(self, settings: NnlsSettings) -> tuple[float, int, list[float]]:
        self._active[:] = True
        return _run_cycles(self._S, self._CAt, self._Bt, self._U,
                           self.C.col_l2sq, self.r, settings, self._active)

    def u_drift(self) -> float:
        """Relative gap between the maintained U and a fresh ``B^T S``."""
        fresh = self.Bt @ self.S
        scale = max(np.abs(fresh).max(initial=0.0), 1.0)
        return float(np.abs(fresh - self.U).max(initial=0.0) / scale)

    def copy(self) -> "NnlsWorkspace":
        ws = NnlsWorkspace.__new__(NnlsWorkspace)
        ws.C = self.C
        ws.capacity = self.capacity
        ws.anchors = list(self.anchors)
        for name in ("_S", "_CAt", "_Bt", "_U", "_active"):
            setattr(ws, name, getattr(self, name).copy())
        return ws


def nnls_solve(C: GramCache, anchors, warm_start=None,
               settings: NnlsSettings | None = None) -> NnlsResult:
    """Project every column of X onto the cone of ``X[:, anchors]``.

    Returns the coefficients ``B`` (``r x n``, non-negative), the final
    objective ``||X - X_A B||_F^2``, the number of cycles run and the
    objective after each cycle (entry 0 is the starting point).
    """
    settings = settings or NnlsSettings()
    ws = NnlsWorkspace.from_anchors(C, anchors, warm_start)
    obj, cycles, history = ws.solve(settings)
    return NnlsResult(ws.B, obj, cycles, history)


def nnls_coordinate_cycle(ws: NnlsWorkspace) -> NnlsWorkspace:
    """One cyclic pass over the anchors, in insertion order, for every column."""
    ws.cycle()
    return ws


def residual_gram_row(ws: NnlsWorkspace, C: GramCache, i: int) -> np.ndarray:
    """Unclamped row ``i`` of ``R^T X``, i.e. ``C[i, :] - H[:, i]^T C[A, :]``."""
    row = gram_rows(C, [i])[0]
    out = np.empty(C.n)
    _minus_combination(row, np.ascontiguousarray(ws._Bt[i]), ws._CAt, ws.r, out)
    return out


def residual_norms_sq(ws: NnlsWorkspace, C: GramCache) -> np.ndarray:
    """``||R_k||^2`` for every column, clamped at 0 against cancellation."""
    return np.maximum(ws.column_objectives(), 0.0)
