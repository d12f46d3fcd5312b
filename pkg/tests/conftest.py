import os

# Give numba a pool larger than the core count so thread-count tests exercise
# real multi-threaded schedules. Must run before numba is imported.
os.environ.setdefault("NUMBA_NUM_THREADS", "8")

import contextlib  # noqa: E402

import numba  # noqa: E402
import numpy as np  # noqa: E402
import pytest  # noqa: E402

from xraynmf.sparse import SparseMatrix  # noqa: E402


@contextlib.contextmanager
def threads(n):
    old = numba.get_num_threads()
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    try:
        yield
    finally:
        numba.set_num_threads(old)


@pytest.fixture
def three_col():
    """x0 = (1, 0), x1 = (0, 1), x2 = 0.6 x0 + 0.4 x1."""
    return SparseMatrix.from_dense([[1.0, 0.0, 0.6], [0.0, 1.0, 0.4]])


def random_sparse(rng, m, n, density, signed=False):
    a = rng.uniform(0.1, 1.0, size=(m, n))
    if signed:
        a *= rng.choice([-1.0, 1.0], size=(m, n))
    a[rng.uniform(size=(m, n)) >= density] = 0.0
    return a


def nnls_oracle(Xd, anchors, cols=None):
    """Exhaustive active-set NNLS: best feasible least-squares fit over all supports."""
    import itertools

    A = Xd[:, anchors]
    r = len(anchors)
    cols = range(Xd.shape[1]) if cols is None else cols
    B = np.zeros((r, Xd.shape[1]))
    total = 0.0
    for j in cols:
        y = Xd[:, j]
        best, best_b = float(y @ y), np.zeros(r)
        for k in range(1, r + 1):
            for F in itertools.combinations(range(r), k):
                F = list(F)
                x, *_ = np.linalg.lstsq(A[:, F], y, rcond=None)
                if np.all(x >= 0):
                    res = y - A[:, F] @ x
                    val = float(res @ res)
                    if val < best:
                        best = val
                        best_b = np.zeros(r)
                        best_b[F] = x
        B[:, j] = best_b
        total += best
    return B, total


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
