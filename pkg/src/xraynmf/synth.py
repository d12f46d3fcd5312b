"""Synthetic near-separable data and the anchor-recovery noise sweep."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .detection import SelectionCriterion
from .driver import XrayConfig, xray_run
from .sparse import SparseMatrix, gram


@dataclass(frozen=True)
class SyntheticSpec:
    m: int = 200
    r_true: int = 20
    n: int = 210
    dirichlet_alpha_range: tuple[float, float] = (0.0, 1.0)
    noise_delta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n < self.r_true:
            raise ValueError("n must be >= r_true")
        if self.m < 1 or self.r_true < 1:
            raise ValueError("m and r_true must be >= 1")
        if self.noise_delta < 0:
            raise ValueError("noise_delta must be >= 0")


def _dirichlet(rng: np.random.Generator, alpha: np.ndarray, size: int) -> np.ndarray:
    """Columns ~ Dirichlet(alpha) from normalized Gamma draws.

    Gamma(a) is drawn as Gamma(a + 1) * U**(1/a) in log space so that
    tiny shape parameters do not underflow every component to zero.
    """
    k = len(alpha)
    log_g = np.log(rng.gamma(alpha + 1.0, size=(size, k))) \
        + np.log(rng.uniform(size=(size, k))) / alpha
    log_g -= log_g.max(axis=1, keepdims=True)
    g = np.exp(log_g)
    return (g / g.sum(axis=1, keepdims=True)).T


def gen_separable_dense(spec: SyntheticSpec):
    """``(X, W, H)`` as dense arrays; ``X = W H + N``."""
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.dirichlet_alpha_range
    W = rng.uniform(0.0, 1.0, size=(spec.m, spec.r_true))
    # alpha in (lo, hi]: 1 - U maps [0, 1) onto (0, 1]
    alpha = lo + (hi - lo) * (1.0 - rng.uniform(size=spec.r_true))
    H = np.hstack([np.eye(spec.r_true), _dirichlet(rng, alpha, spec.n - spec.r_true)])
    X = W @ H
    if spec.noise_delta > 0:
        X = X + rng.normal(0.0, spec.noise_delta, size=X.shape)
    return X, W, H


def gen_separable(spec: SyntheticSpec) -> tuple[SparseMatrix, list[int]]:
    """Separable instance with anchors at columns ``0 .. r_true - 1``."""
    X, _, _ = gen_separable_dense(spec)
    return SparseMatrix.from_dense(X), list(range(spec.r_true))


def recovery_fraction(found, truth) -> float:
    truth = set(int(t) for t in truth)
    if not truth:
        return 1.0
    return len(truth & set(int(f) for f in found)) / len(truth)


def trial_seed(master: int, delta_index: int, trial: int) -> int:
    """Seed for one (delta, trial) instance; every criterion sees the same data."""
    ss = np.random.SeedSequence([int(master), int(delta_index), int(trial)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class SweepRun:
    delta: float
    criterion: str
    trial: int
    recovery: float
    final_residual: float
    seconds: float


@dataclass
class SweepResult:
    deltas: list[float]
    criteria: list[str]
    trials: int
    runs: list[SweepRun] = field(default_factory=list)

    def aggregate(self) -> list[tuple[float, str, float, float]]:
        rows = []
        for d in self.deltas:
            for c in self.criteria:
                vals = np.array([r.recovery for r in self.runs
                                 if r.delta == d and r.criterion == c])
                rows.append((d, c, float(vals.mean()), float(vals.std())))
        return rows

    def mean_recovery(self, delta: float, criterion: str) -> float:
        for d, c, mean, _ in self.aggregate():
            if d == delta and c == criterion:
                return mean
        raise KeyError((delta, criterion))

    def write_runs_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["delta", "criterion", "trial", "recovery", "final_residual", "seconds"])
            for r in self.runs:
                w.writerow([repr(r.delta), r.criterion, r.trial, repr(r.recovery),
                            repr(r.final_residual), f"{r.seconds:.6f}"])

    def write_aggregate_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["delta", "criterion", "mean_recovery", "std_recovery"])
            for d, c, mean, std in self.aggregate():
                w.writerow([repr(d), c, repr(mean), repr(std)])


def noise_sweep(template: SyntheticSpec, deltas, criteria, trials: int,
                seed: int | None = None, progress=None) -> SweepResult:
    """Anchor recovery of each criterion over a grid of noise levels.

    Runs are ordered by (delta, criterion, trial). ``progress``, if given,
    is called with each finished :class:`SweepRun`.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    master = template.seed if seed is None else seed
    deltas = [float(d) for d in deltas]
    criteria = list(criteria)
    result = SweepResult(deltas, criteria, trials)
    instances = {}
    for di, d in enumerate(deltas):
        for t in range(trials):
            s = trial_seed(master, di, t)
            X, truth = gen_separable(replace(template, noise_delta=d, seed=s))
            instances[di, t] = (X, truth, gram(X), s)
    for di, d in enumerate(deltas):
        for c in criteria:
            for t in range(trials):
                X, truth, C, s = instances[di, t]
                cfg = XrayConfig(template.r_true, SelectionCriterion(c, seed=s))
                t0 = time.perf_counter()
                res = xray_run(X, cfg, gram_cache=C)
                run = SweepRun(d, c, t, recovery_fraction(res.anchors, truth),
                               res.objective, time.perf_counter() - t0)
                result.runs.append(run)
                if progress is not None:
                    progress(run)
    return result


def parse_grid(text: str) -> list[float]:
    """``"0:1.5:0.1"`` (inclusive range) or ``"0,0.3,0.6"`` or a single value."""
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ValueError(f"bad range {text!r}; expected start:stop:step")
        start, stop, step = parts
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + k * step, 12) for k in range(max(count, 0))]
    return [float(p) for p in text.split(",") if p.strip()]
