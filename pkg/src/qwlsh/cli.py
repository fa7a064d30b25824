"""Command line entry point: ``qwlsh build|train|run|sweep``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bench
from .bench import Alternative, compare_alternatives, index_dataset, sweep_report, write_csv
from .core import GaussianMixture, QueryWorkload, generate_workload, load_csv, load_fvecs, truncate_dims
from .costmodel import load_model, save_model, train
from .lsh import DEFAULT_C, DEFAULT_DELTA, DEFAULT_W, build_index, derive_params, open_index
from .storage import Strategy

MB = 1024 * 1024
log = logging.getLogger("qwlsh")


def _int_list(text: str) -> list[int]:
    return [int(float(tok)) for tok in text.split(",") if tok.strip()]


def _load_dataset(args):
    if args.synthetic:
        n, d = (int(x) for x in args.synthetic.lower().split("x"))
        return GaussianMixture(d, seed=args.seed).dataset(n, d)
    if args.data is None:
        raise SystemExit("either --data or --synthetic is required")
    if args.format == "fvecs":
        ds = load_fvecs(args.data)
    else:
        ds = load_csv(args.data, has_header=args.has_header)
    if args.truncate_dims:
        ds = truncate_dims(ds, args.truncate_dims)
    return ds


def cmd_build(args) -> int:
    ds = _load_dataset(args)
    params = derive_params(args.c, args.width, args.delta, ds.n)
    idx = build_index(ds, params, args.seed, args.out, args.page_size)
    print(f"built {args.out}: n={idx.n} d={idx.d} m={params.m} threshold={params.threshold} "
          f"p1={params.p1:.4f} p2={params.p2:.4f} size={idx.total_bytes() / MB:.1f} MB")
    return 0


def cmd_train(args) -> int:
    if args.data:
        base = load_fvecs(args.data) if args.format == "fvecs" else load_csv(args.data, args.has_header)
    else:
        base = GaussianMixture(max(_int_list(args.dims)), seed=args.seed)
    model = train(base, _int_list(args.cards), _int_list(args.dims), int(args.cache * MB),
                  args.queries, args.k, args.seed, args.workdir, strategy=args.strategy)
    save_model(model, args.out)
    for (card, dim), entry in sorted(model.entries.items()):
        print(f"{card:>8} x {dim:<6} best_fraction={entry.best_fraction:.2f} "
              f"total_io={entry.total_io_at_best / MB:.2f} MB")
    print(f"model written to {args.out}")
    return 0


def _workload(args, idx):
    ds = index_dataset(idx)
    if args.queries_file:
        return QueryWorkload.load(args.queries_file, ds, args.k)
    return generate_workload(ds, args.gen_queries, args.k, args.seed)


def _print_reports(reports) -> None:
    for r in reports:
        frac = "-" if r.fraction is None else f"{r.fraction:.2f}"
        print(f"{r.alt:<6} fraction={frac:<5} index_io={r.index_io / MB:10.2f} MB "
              f"data_io={r.data_io / MB:10.2f} MB total_io={r.total_io / MB:10.2f} MB "
              f"wall={r.wall_ms:9.1f} ms")


def cmd_run(args) -> int:
    idx = open_index(args.index)
    wl = _workload(args, idx)
    alts = Alternative.parse(args.alt)
    model = load_model(args.model) if args.model else None
    if Alternative.QWLSH in alts and model is None:
        raise SystemExit("--alt qwlsh needs --model")
    reports = compare_alternatives(idx, wl, int(args.cache_mb * MB), model, alts,
                                   args.strategy, replay=args.replay, repeat=args.repeat)
    _print_reports(reports)
    if args.out:
        write_csv(args.out, reports)
    return 0


def cmd_sweep(args) -> int:
    idx = open_index(args.index)
    wl = _workload(args, idx)
    reports = sweep_report(idx, wl, int(args.cache_mb * MB), args.strategy)
    _print_reports(reports)
    if args.out:
        write_csv(args.out, reports)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qwlsh", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_args(p):
        p.add_argument("--data", type=Path)
        p.add_argument("--format", choices=("fvecs", "csv"), default="fvecs")
        p.add_argument("--has-header", action="store_true")
        p.add_argument("--synthetic", metavar="NxD",
                       help="generate a Gaussian-mixture dataset instead of reading --data")
        p.add_argument("--truncate-dims", type=int)

    p = sub.add_parser("build", help="build an on-disk index")
    data_args(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--c", type=float, default=DEFAULT_C)
    p.add_argument("--width", type=float, default=DEFAULT_W)
    p.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--page-size", type=int, default=4096)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("train", help="train the index-cache fraction model")
    p.add_argument("--data", type=Path, help="source dataset (default: synthetic mixture)")
    p.add_argument("--format", choices=("fvecs", "csv"), default="fvecs")
    p.add_argument("--has-header", action="store_true")
    p.add_argument("--cards", required=True, help="comma-separated cardinalities")
    p.add_argument("--dims", required=True, help="comma-separated dimensionalities")
    p.add_argument("--cache", type=float, default=bench.DEFAULT_CACHE_MB, help="cache size in MB")
    p.add_argument("--queries", type=int, default=bench.DEFAULT_QUERIES)
    p.add_argument("--k", type=int, default=bench.DEFAULT_K)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strategy", default="1", choices=("1", "2"))
    p.add_argument("--workdir", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_train)

    def workload_args(p):
        p.add_argument("--index", type=Path, required=True)
        p.add_argument("--cache-mb", type=float, default=bench.DEFAULT_CACHE_MB)
        group = p.add_mutually_exclusive_group()
        group.add_argument("--queries-file", type=Path)
        group.add_argument("--gen-queries", type=int, default=bench.DEFAULT_QUERIES)
        p.add_argument("--k", type=int, default=bench.DEFAULT_K)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--strategy", default="1", choices=("1", "2"))
        p.add_argument("--out", type=Path)

    p = sub.add_parser("run", help="run a workload under one or more alternatives")
    workload_args(p)
    p.add_argument("--model", type=Path)
    p.add_argument("--alt", default="all",
                   help="naive|ci|cd|cicd|opt|qwlsh|all, comma-separated")
    p.add_argument("--repeat", type=int, default=1)
    p.add_argument("--replay", action="store_true",
                   help="execute queries once and replay the page trace per configuration")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="IndexIO/DataIO/TotalIO for all 11 index-cache fractions")
    workload_args(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "strategy", None) is not None:
        args.strategy = Strategy.parse(args.strategy)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
