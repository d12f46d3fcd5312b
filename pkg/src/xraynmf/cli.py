"""Command-line entry point: ``xraynmf {factorize,sweep,ingest,gram-stats}``.

Exit status is 0 on success, 2 on bad flags and 1 when a computation or
file stage fails. Timings go to stderr as ``stage,seconds`` lines.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

VARIANTS = ("rand", "max", "dist", "greedy")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _threads(args) -> int:
    return args.threads if args.threads is not None else (os.cpu_count() or 1)


def configure_threads(n: int) -> int:
    """Cap numba's worker pool at ``n`` threads; returns the count in effect."""
    if "numba" not in sys.modules and "NUMBA_NUM_THREADS" not in os.environ:
        os.environ["NUMBA_NUM_THREADS"] = str(max(n, os.cpu_count() or 1))
    import numba

    limit = numba.config.NUMBA_NUM_THREADS
    if n > limit:
        print(f"warning: --threads {n} exceeds the pool size {limit}; using {limit}",
              file=sys.stderr)
        n = limit
    numba.set_num_threads(n)
    return n


def _timing(stage: str, seconds: float) -> None:
    print(f"{stage},{seconds:.6f}", file=sys.stderr)


class StageError(Exception):
    def __init__(self, stage: str, err: Exception):
        super().__init__(f"{stage}: {err}")


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ValueError, OSError, ArithmeticError) as err:
        raise StageError(name, err) from err


def cmd_factorize(args) -> int:
    import numpy as np

    from .detection import SelectionCriterion
    from .driver import XrayConfig, model_select, xray_run
    from .ingest import (normalize_columns, read_coordinate_matrix, read_vocab,
                         write_anchor_report, write_coordinate_matrix)
    from .nnls import NnlsSettings

    t0 = time.perf_counter()
    X = _stage("read", read_coordinate_matrix, args.input)
    labels = _stage("read", read_vocab, args.vocab) if args.vocab else None
    X = normalize_columns(X, args.normalize).matrix
    _timing("read", time.perf_counter() - t0)

    rank = args.rank if args.rank is not None else min(args.max_rank, X.n_cols)
    try:
        cfg = XrayConfig(
            rank=rank,
            criterion=SelectionCriterion(args.variant, args.seed),
            nnls=NnlsSettings(args.tol, args.max_cycles),
            refine_iters=args.refine_iters,
            improvement_threshold=args.auto_rank,
            dense_threshold=args.dense_threshold,
        )
    except ValueError as err:
        print(f"error: config: {err}", file=sys.stderr)
        return 2
    if args.auto_rank is not None:
        res = _stage("factorize", model_select, X, cfg, rank)
    else:
        res = _stage("factorize", xray_run, X, cfg)

    frob = float(np.sum(X.data ** 2))
    for t, (rep, obj) in enumerate(zip(res.reports, res.residual_history), start=1):
        rel = max(obj, 0.0) / frob if frob else 0.0
        print(f"iter {t} anchor {rep.chosen + 1} residual {max(obj, 0.0):.6g} "
              f"relative {rel:.6g}", file=sys.stderr)
    if res.refine_history:
        print(f"refined residual {res.refine_history[-1]:.6g}", file=sys.stderr)
    for stage, secs in res.timings.items():
        _timing(stage, secs)

    t0 = time.perf_counter()
    if args.out_anchors:
        _stage("write", write_anchor_report, args.out_anchors, res.anchors, labels)
    if args.out_h:
        _stage("write", write_coordinate_matrix, res.H, args.out_h)
    if args.out_w and res.W is not None:
        _stage("write", write_coordinate_matrix, res.W, args.out_w)
    _timing("write", time.perf_counter() - t0)
    return 0


def cmd_sweep(args) -> int:
    from .synth import SyntheticSpec, noise_sweep, parse_grid

    try:
        deltas = parse_grid(args.deltas)
        variants = [v.strip() for v in args.variants.split(",") if v.strip()]
        bad = [v for v in variants if v not in VARIANTS]
        if bad or not variants:
            raise ValueError(f"unknown variants {bad}")
        spec = SyntheticSpec(m=args.m, r_true=args.r, n=args.n, seed=args.seed)
    except ValueError as err:
        print(f"error: flags: {err}", file=sys.stderr)
        return 2

    def progress(run):
        print(f"delta {run.delta:g} {run.criterion} trial {run.trial} "
              f"recovery {run.recovery:.3f}", file=sys.stderr)

    t0 = time.perf_counter()
    res = _stage("sweep", noise_sweep, spec, deltas, variants, args.trials, args.seed,
                 progress if args.verbose else None)
    _timing("sweep", time.perf_counter() - t0)
    out = Path(args.out)
    agg = Path(args.out_aggregate) if args.out_aggregate else out.with_name(out.stem + "_aggregate.csv")
    _stage("write", res.write_runs_csv, out)
    _stage("write", res.write_aggregate_csv, agg)
    for d, c, mean, std in res.aggregate():
        print(f"{d:g},{c},{mean:.4f},{std:.4f}")
    return 0


def cmd_ingest(args) -> int:
    from .ingest import build_docterm, read_triples, write_coordinate_matrix, write_vocab

    t0 = time.perf_counter()
    X, stats = _stage("ingest", build_docterm, read_triples(args.triples),
                      args.min_df, args.max_df_frac)
    _stage("write", write_coordinate_matrix, X, args.out)
    if args.out_vocab:
        _stage("write", write_vocab, args.out_vocab, stats.labels)
    _timing("ingest", time.perf_counter() - t0)
    print(f"documents {stats.n_docs} terms {stats.n_terms} nnz {X.nnz}", file=sys.stderr)
    return 0


def cmd_gram_stats(args) -> int:
    from .ingest import read_coordinate_matrix
    from .sparse import gram

    X = _stage("read", read_coordinate_matrix, args.input)
    t0 = time.perf_counter()
    C = _stage("gram", gram, X, args.dense_threshold)
    _timing("gram", time.perf_counter() - t0)
    m, n = X.shape
    print(f"rows,{m}")
    print(f"cols,{n}")
    print(f"nnz_x,{X.nnz}")
    print(f"nnz_gram,{C.nnz}")
    print(f"gram_density,{C.density:.6g}")
    print(f"gram_storage,{'dense' if C.is_dense else 'sparse'}")
    print(f"frob_sq,{C.frob_sq:.17g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="xraynmf", description=__doc__.splitlines()[0],
                                formatter_class=fmt)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--threads", type=_positive_int, default=None,
                        help="worker threads for parallel sections (default: core count)")

    f = sub.add_parser("factorize", help="select anchors and coefficients", formatter_class=fmt)
    f.add_argument("--input", required=True, help="MatrixMarket coordinate file")
    g = f.add_mutually_exclusive_group(required=True)
    g.add_argument("--rank", type=int, help="number of anchors to select")
    g.add_argument("--auto-rank", type=float, metavar="THRESHOLD",
                   help="stop when one more anchor improves the residual by less than this fraction")
    f.add_argument("--max-rank", type=_positive_int, default=100,
                   help="upper bound on anchors with --auto-rank")
    f.add_argument("--variant", choices=VARIANTS, default="greedy")
    f.add_argument("--normalize", choices=("none", "l1", "l2"), default="none",
                   help="column normalization applied before factorizing")
    f.add_argument("--seed", type=int, default=0, help="seed for the rand variant")
    f.add_argument("--tol", type=float, default=1e-10, help="relative objective change for NNLS")
    f.add_argument("--max-cycles", type=int, default=100, help="NNLS cycle cap for the final projection")
    f.add_argument("--refine-iters", type=int, default=0, help="alternating refinement sweeps")
    f.add_argument("--dense-threshold", type=float, default=0.25,
                   help="store X^T X densely at or above this density")
    f.add_argument("--vocab", help="vocabulary file for anchor labels")
    f.add_argument("--out-anchors", help="anchor report path")
    f.add_argument("--out-h", help="MatrixMarket path for H")
    f.add_argument("--out-w", help="MatrixMarket path for refined W (with --refine-iters)")
    common(f)
    f.set_defaults(func=cmd_factorize)

    s = sub.add_parser("sweep", help="synthetic anchor-recovery noise sweep", formatter_class=fmt)
    s.add_argument("--m", type=_positive_int, default=200, help="rows")
    s.add_argument("--r", type=_positive_int, default=20, help="true anchors")
    s.add_argument("--n", type=_positive_int, default=210, help="columns")
    s.add_argument("--deltas", default="0:1.5:0.1", help="start:stop:step or comma list")
    s.add_argument("--trials", type=int, default=10)
    s.add_argument("--variants", default="rand,max,dist,greedy")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="per-run CSV path")
    s.add_argument("--out-aggregate", help="aggregate CSV path (default: <out>_aggregate.csv)")
    s.add_argument("--verbose", action="store_true", help="report each run on stderr")
    common(s)
    s.set_defaults(func=cmd_sweep)

    i = sub.add_parser("ingest", help="doc-term triples to a TF-IDF matrix", formatter_class=fmt)
    i.add_argument("--triples", required=True, help="doc_id<TAB>term<TAB>count file")
    i.add_argument("--min-df", type=int, default=1, help="drop terms in fewer documents")
    i.add_argument("--max-df-frac", type=float, default=1.0,
                   help="drop terms in more than this fraction of documents")
    i.add_argument("--out", required=True, help="MatrixMarket output path")
    i.add_argument("--out-vocab", help="vocabulary output path")
    common(i)
    i.set_defaults(func=cmd_ingest)

    gs = sub.add_parser("gram-stats", help="size and density of X^T X", formatter_class=fmt)
    gs.add_argument("--input", required=True, help="MatrixMarket coordinate file")
    gs.add_argument("--dense-threshold", type=float, default=0.25)
    common(gs)
    gs.set_defaults(func=cmd_gram_stats)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "factorize":
        if args.rank is not None and args.rank < 1:
            parser.error("rank must be >= 1")
        if args.max_cycles < 1 or not args.tol > 0 or args.refine_iters < 0:
            parser.error("--tol must be > 0, --max-cycles >= 1, --refine-iters >= 0")
    if args.command == "sweep" and args.trials < 1:
        parser.error("--trials must be >= 1")
    if args.command == "ingest" and not (0 < args.max_df_frac <= 1 and args.min_df >= 0):
        parser.error("--max-df-frac must be in (0, 1] and --min-df >= 0")

    configure_threads(_threads(args))
    try:
        return args.func(args)
    except StageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
