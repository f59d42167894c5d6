"""``compactdb`` command line.

Every invocation rebuilds its state from the config and seed, so the same
command line always produces the same CSV.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, WorkloadConfig, load_config
from .metrics import Metrics, q1_csv
from .plots import write_figures
from .report import report_compression
from .workload import Workload, build_engine, run_mixed, run_oltp

log = logging.getLogger("compactdb.cli")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """Usage errors raise instead of exiting so ``main`` can map them to exit 1."""

    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


class _UsageError(Exception):
    pass


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", help="key = value workload file")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--eager", action="store_true", default=None, help="intern strings at insert time")
    p.add_argument("--ordered-dict", action="store_true", default=None, help="order-preserving dictionaries")
    p.add_argument("--csv", metavar="PATH", help="write CSV here (figures go alongside) instead of stdout")
    p.add_argument("--timing", action="store_true", help="include wall-clock columns in the CSV")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="compactdb", description="Hot/cold columnar storage engine benchmark.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    sub.add_parser("load", parents=[common], help="generate and populate, then settle")
    for name, text in (("oltp", "run the transactional mix"), ("mixed", "transactions with snapshots and Q1")):
        sp = sub.add_parser(name, parents=[common], help=text)
        sp.add_argument("--tx", type=int, default=10_000, help="transaction count")
    sp = sub.add_parser("q1", parents=[common], help="run Q1 on a snapshot of the loaded data")
    sp.add_argument("--prefix", help="ol_dist_info prefix")
    sp.add_argument("--date", help="lower delivery date bound (exclusive)")
    sp = sub.add_parser("stats", parents=[common], help="storage counters")
    sp.add_argument("--load", action="store_true", help="populate before reporting")
    sp = sub.add_parser("persist", parents=[common], help="write frozen chunks to a file")
    sp.add_argument("--out", required=True, metavar="PATH")
    return parser


def _config(args) -> WorkloadConfig:
    return load_config(args.config, seed=args.seed, eager_compression=args.eager, ordered_dict=args.ordered_dict)


def _prepare(config: WorkloadConfig, load: bool = True):
    workload = Workload(config)
    engine = build_engine(config, workload.pool.values)
    metrics = Metrics()
    if load:
        workload.load(engine)
        for _ in range(config.settle_ticks):
            metrics.freezes.extend(engine.maintenance_tick())
    return engine, workload, metrics


def _counters(engine) -> dict[str, int]:
    out = {"fork_cost": engine.fork_cost(), "freezes": len(engine.freeze_reports)}
    for state in ("hot", "cooling", "cold", "frozen"):
        out[f"chunks_{state}"] = 0
    for state, n in engine.chunk_counts().items():
        out[f"chunks_{state}"] = n
    for name, rel in engine.relations.items():
        out[f"rows_{name}"] = rel.row_count()
        out[f"dictionary_entries_{name}"] = sum(len(d.live_keys()) for d in rel.dictionaries.values())
    return out


def _emit(text: str, path: Optional[str]) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)


def _finish(metrics: Metrics, engine, args) -> None:
    metrics.counters.update(_counters(engine))
    metrics.compression.extend(report_compression(engine, name) for name in sorted(engine.relations))
    _emit(metrics.to_csv(args.timing), args.csv)
    if args.csv is not None:
        for fig in write_figures(metrics, args.csv):
            log.info("wrote %s", fig)


def run(args) -> int:
    config = _config(args)
    cmd = args.command
    if cmd == "stats":
        engine, _, metrics = _prepare(config, load=args.load)
        metrics.counters.update(_counters(engine))
        _emit(metrics.to_csv(args.timing), args.csv)
        return EXIT_OK
    engine, workload, metrics = _prepare(config)
    if cmd == "load":
        _finish(metrics, engine, args)
    elif cmd == "oltp":
        if args.tx < 0:
            raise _UsageError("--tx must be >= 0")
        run_oltp(engine, workload, args.tx, metrics)
        _finish(metrics, engine, args)
    elif cmd == "mixed":
        if args.tx < 0:
            raise _UsageError("--tx must be >= 0")
        mixed = run_mixed(engine, workload, args.tx)
        mixed.freezes[:0] = metrics.freezes
        _finish(mixed, engine, args)
    elif cmd == "q1":
        from ..query import q1_aggregate

        prefix = config.q1_prefix if args.prefix is None else args.prefix
        date = config.q1_date if args.date is None else args.date
        with engine.create_snapshot() as handle:
            result = q1_aggregate(handle, prefix or None, date)
        _emit(q1_csv(result), args.csv)
    elif cmd == "persist":
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "wb") as sink:
            metrics.persists.extend(engine.persist(sink))
        _finish(metrics, engine, args)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        sys.stderr.write(str(e))
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if not e.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except _UsageError as e:
        sys.stderr.write(f"compactdb: error: {e}\n")
        return EXIT_USAGE
    except (ConfigError, OSError, ValueError, KeyError) as e:
        sys.stderr.write(f"compactdb: {e}\n")
        return EXIT_RUNTIME
    except Exception as e:  # noqa: BLE001
        log.exception("unexpected failure")
        sys.stderr.write(f"compactdb: {type(e).__name__}: {e}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
