"""Reading and writing matrices and corpora.

File formats
------------
MatrixMarket
    ``%%MatrixMarket matrix coordinate real general``, 1-based indices,
    duplicates summed on read, values written with 17 significant digits
    in column-major order.
Doc-term triples
    UTF-8, one ``doc_id<TAB>term<TAB>count`` per line, ``#`` comments.
Anchor report
    ``rank<TAB>column_index<TAB>term_label`` with 1-based rank and column.
Vocabulary
    ``column_index<TAB>term_label`` with 1-based column.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .sparse import SparseMatrix, _canonicalize

MM_HEADER = "%%MatrixMarket matrix coordinate real general"


class FormatError(ValueError):
    """Malformed input file; the message names the offending line."""

    def __init__(self, path, lineno: int | None, msg: str):
        where = f"{path}:{lineno}" if lineno is not None else str(path)
        super().__init__(f"{where}: {msg}")
        self.lineno = lineno


class NormalizationMode(str, Enum):
    NONE = "none"
    L1 = "l1"
    L2 = "l2"


@dataclass
class CorpusStats:
    n_docs: int
    n_terms: int
    df: np.ndarray
    labels: list[str]
    doc_ids: list[str]

    def term_index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.labels)}


@dataclass
class NormalizedMatrix:
    matrix: SparseMatrix
    zero_columns: np.ndarray  # columns left untouched because their norm is 0


def read_coordinate_matrix(path) -> SparseMatrix:
    """Parse a MatrixMarket coordinate file into canonical CSC."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = iter(enumerate(fh, start=1))
        try:
            lineno, header = next(lines)
        except StopIteration:
            raise FormatError(path, None, "empty file") from None
        tokens = header.strip().lower().split()
        if len(tokens) != 5 or tokens[0] != "%%matrixmarket" or tokens[1] != "matrix" \
                or tokens[2] != "coordinate":
            raise FormatError(path, lineno, f"expected header {MM_HEADER!r}")
        if tokens[3] not in ("real", "integer") or tokens[4] != "general":
            raise FormatError(path, lineno, f"unsupported field/symmetry {tokens[3]} {tokens[4]}")

        size = None
        for lineno, line in lines:
            s = line.strip()
            if s and not s.startswith("%"):
                size = (lineno, s.split())
                break
        if size is None:
            raise FormatError(path, None, "missing size line")
        lineno, parts = size
        try:
            m, n, nnz = (int(p) for p in parts)
        except ValueError:
            raise FormatError(path, lineno, f"bad size line {' '.join(parts)!r}") from None
        if m < 0 or n < 0 or nnz < 0 or len(parts) != 3:
            raise FormatError(path, lineno, "bad size line")

        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz)
        k = 0
        for lineno, line in lines:
            s = line.strip()
            if not s or s.startswith("%"):
                continue
            parts = s.split()
            if k >= nnz:
                raise FormatError(path, lineno, f"more than the declared {nnz} entries")
            if len(parts) != 3:
                raise FormatError(path, lineno, f"expected 'row col value', got {s!r}")
            try:
                i, j = int(parts[0]), int(parts[1])
            except ValueError:
                raise FormatError(path, lineno, f"non-integer index in {s!r}") from None
            try:
                v = float(parts[2])
            except ValueError:
                raise FormatError(path, lineno, f"non-numeric value {parts[2]!r}") from None
            if not (1 <= i <= m and 1 <= j <= n):
                raise FormatError(path, lineno, f"entry ({i},{j}) outside declared {m}x{n}")
            if not math.isfinite(v):
                raise FormatError(path, lineno, f"non-finite value {parts[2]!r}")
            rows[k], cols[k], vals[k] = i - 1, j - 1, v
            k += 1
        if k != nnz:
            raise FormatError(path, None, f"declared {nnz} entries, found {k}")
    return _canonicalize(m, n, rows, cols, vals)


def write_coordinate_matrix(M, path) -> None:
    """Write a SparseMatrix or dense array; dense zeros are not stored."""
    if isinstance(M, SparseMatrix):
        m, n = M.shape
        rows = M.indices
        cols = np.repeat(np.arange(n), np.diff(M.indptr))
        vals = M.data
    else:
        a = np.asarray(M, dtype=np.float64)
        m, n = a.shape
        cols, rows = np.nonzero(a.T)
        vals = a[rows, cols]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(MM_HEADER + "\n")
        fh.write(f"{m} {n} {len(vals)}\n")
        fh.writelines(f"{i + 1} {j + 1} {v:.17g}\n" for i, j, v in zip(rows, cols, vals))


def read_triples(path) -> Iterator[tuple[str, str, float]]:
    """Yield ``(doc_id, term, count)`` from a tab-separated triples file."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.rstrip("\r\n")
            if not s.strip() or s.lstrip().startswith("#"):
                continue
            parts = s.split("\t")
            if len(parts) != 3:
                raise FormatError(path, lineno, "expected doc_id<TAB>term<TAB>count")
            try:
                count = float(parts[2])
            except ValueError:
                raise FormatError(path, lineno, f"non-numeric count {parts[2]!r}") from None
            if not count > 0:
                raise FormatError(path, lineno, f"count must be > 0, got {parts[2]!r}")
            yield parts[0], parts[1], count


def _doc_key(d: str):
    return (0, int(d), d) if d.isdigit() else (1, 0, d)


def build_docterm(triples: Iterable[tuple[str, str, float]], min_df: int = 1,
                  max_df_frac: float = 1.0) -> tuple[SparseMatrix, CorpusStats]:
    """Documents x terms TF-IDF matrix with document-frequency thresholding.

    Entry ``(d, t)`` is ``tf * ln(n_docs / df_t)``. Documents are ordered
    by id (numeric ids numerically) and terms by label, so the result does
    not depend on the order of the input stream. Terms present in every
    document get an idf of 0 and keep an empty column.
    """
    tf: dict[tuple[str, str], float] = defaultdict(float)
    for doc, term, count in triples:
        if not count > 0:
            raise ValueError(f"count must be > 0 for ({doc!r}, {term!r})")
        tf[doc, term] += count
    if not tf:
        raise ValueError("empty corpus")
    docs = sorted({d for d, _ in tf}, key=_doc_key)
    n_docs = len(docs)
    df: dict[str, int] = defaultdict(int)
    for _, term in tf:
        df[term] += 1
    kept = sorted(t for t, c in df.items() if c >= min_df and c <= max_df_frac * n_docs)
    if not kept:
        raise ValueError("empty corpus after document-frequency thresholding")
    doc_pos = {d: i for i, d in enumerate(docs)}
    term_pos = {t: j for j, t in enumerate(kept)}
    entries = [(doc_pos[d], term_pos[t], c * math.log(n_docs / df[t]))
               for (d, t), c in tf.items() if t in term_pos]
    arr = np.array(entries, dtype=np.float64).reshape(-1, 3)
    X = _canonicalize(n_docs, len(kept), arr[:, 0].astype(np.int64),
                      arr[:, 1].astype(np.int64), arr[:, 2])
    stats = CorpusStats(n_docs, len(kept), np.array([df[t] for t in kept]), kept, docs)
    return X, stats


def normalize_columns(X: SparseMatrix, mode) -> NormalizedMatrix:
    """Scale each column to unit l1 or l2 norm; ``none`` returns ``X`` itself."""
    mode = NormalizationMode(mode)
    counts = np.diff(X.indptr)
    cols = np.repeat(np.arange(X.n_cols), counts)
    if mode is NormalizationMode.L1:
        norms = np.zeros(X.n_cols)
        np.add.at(norms, cols, np.abs(X.data))
    else:
        sq = np.zeros(X.n_cols)
        np.add.at(sq, cols, X.data ** 2)
        norms = np.sqrt(sq)
    zero = norms == 0
    if mode is NormalizationMode.NONE:
        return NormalizedMatrix(X, zero)
    scale = np.where(zero, 1.0, norms)
    data = X.data / scale[cols]
    return NormalizedMatrix(SparseMatrix(X.n_rows, X.n_cols, X.indptr.copy(),
                                         X.indices.copy(), data), zero)


def write_anchor_report(path, anchors, labels=None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rank, a in enumerate(anchors, start=1):
            label = labels[a] if labels is not None and a < len(labels) else ""
            fh.write(f"{rank}\t{a + 1}\t{label}\n")


def read_anchor_report(path) -> list[tuple[int, int, str]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rank, col, label = line.rstrip("\n").split("\t")
            out.append((int(rank), int(col), label))
    return out


def write_vocab(path, labels) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for j, label in enumerate(labels, start=1):
            fh.write(f"{j}\t{label}\n")


def read_vocab(path) -> list[str]:
    labels = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.rstrip("\r\n")
            if not s:
                continue
            idx, _, label = s.partition("\t")
            try:
                labels[int(idx) - 1] = label
            except ValueError:
                raise FormatError(path, lineno, "expected column_index<TAB>term") from None
    size = max(labels) + 1 if labels else 0
    return [labels.get(j, "") for j in range(size)]
