"""``mcfopt`` command line: verify, train, compare, memory-table.

Exit status: 0 success, 1 verification or training failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config
from .metrics import CSV_COLUMNS, MetricsRecord
from .optim import Strategy, memory_bytes_per_param
from .trainer import RunConfig, RunResult, TrainingError, run
from .verify import run_checks

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
CSV_VERSION_LINE = f"# mcfopt metrics v1 (mcfopt {__version__})"
MEMORY_TABLE_TAGS = ("A", "B", "C", "D-MW-off", "D", "kahan", "sr")


def write_csv(path, records: list[MetricsRecord]) -> None:
    """Atomically write records; nothing is left behind if writing fails."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(CSV_VERSION_LINE + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in records:
                w.writerow(r.csv_row())
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
        changes["task"] = dataclasses.replace(cfg.task, seed=args.seed)
    if getattr(args, "record_every", None) is not None:
        changes["record_every"] = args.record_every
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _run_one(cfg: RunConfig) -> RunResult:
    return run(cfg)


def cmd_verify(args) -> int:
    formats = args.format or ["bf16"]
    results = run_checks(formats, samples=args.samples, seed=args.seed or 0)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_train(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    result = run(cfg)
    write_csv(args.out, result.records)
    print(
        f"{cfg.strategy}: {cfg.steps} steps, loss {result.initial_loss:.6g} -> "
        f"{result.final_loss:.6g}, {len(result.records)} records written to {args.out}"
    )
    return EXIT_OK


def cmd_compare(args) -> int:
    base = _apply_overrides(load_config(args.config), args)
    w, h = base.strategy.work_format, base.strategy.high_format
    tags = [t for t in args.strategies.split(",") if t.strip()]
    if not tags:
        raise ConfigError("--strategies: empty list")
    try:
        strategies = [Strategy.parse(t, w, h) for t in tags]
    except ValueError as exc:
        raise ConfigError(f"--strategies: {exc}") from None
    configs = [dataclasses.replace(base, strategy=s) for s in strategies]
    if args.jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, configs))
    else:
        results = [run(c) for c in configs]

    rows = [rec for group in zip(*(r.records for r in results)) for rec in group]
    write_csv(args.out, rows)

    print(f"{'strategy':<10} {'bytes/param':>11} {'initial loss':>14} {'final loss':>14} {'mean EDQ':>12}")
    for s, r in zip(strategies, results):
        mean_edq = float(np.mean([x.edq for x in r.records])) if r.records else 0.0
        print(
            f"{s.tag.value:<10} {memory_bytes_per_param(s):>11d} {r.initial_loss:>14.6g} "
            f"{r.final_loss:>14.6g} {mean_edq:>12.4e}"
        )
    return EXIT_OK


def memory_table_text() -> str:
    lines = [f"{'strategy':<10} bytes/param"]
    for tag in MEMORY_TABLE_TAGS:
        lines.append(f"{tag:<10} {memory_bytes_per_param(tag)}")
    return "\n".join(lines)


def cmd_memory_table(args) -> int:
    print(memory_table_text())
    return EXIT_OK


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="override the run and data seed")
    common.add_argument("--record-every", type=_positive, default=argparse.SUPPRESS,
                        help="override how often metrics are recorded")

    p = argparse.ArgumentParser(prog="mcfopt", parents=[common],
                                description="Low-precision AdamW experiments.")
    p.add_argument("--version", action="version", version=f"mcfopt {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", parents=[common], help="run exactness censuses and table checks")
    v.add_argument("--format", action="append", metavar="F",
                   help="format to census (repeatable; default bf16)")
    v.add_argument("--samples", type=_positive, default=None,
                   help="sample size for formats wider than 8 bits")
    v.set_defaults(func=cmd_verify)

    t = sub.add_parser("train", parents=[common], help="train one configuration, write CSV")
    t.add_argument("--config", required=True, type=Path)
    t.add_argument("--out", required=True, type=Path)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compare", parents=[common], help="train several strategies on identical data")
    c.add_argument("--config", required=True, type=Path)
    c.add_argument("--strategies", default="A,B,C,D")
    c.add_argument("--out", required=True, type=Path)
    c.add_argument("--jobs", type=_positive, default=1)
    c.set_defaults(func=cmd_compare)

    m = sub.add_parser("memory-table", help="print bytes per parameter for each strategy")
    m.set_defaults(func=cmd_memory_table)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    args.seed = getattr(args, "seed", None)
    args.record_every = getattr(args, "record_every", None)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"mcfopt: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"mcfopt: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"mcfopt: training failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
