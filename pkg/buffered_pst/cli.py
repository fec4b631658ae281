from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from .bench import CSV_HEADER, MODES, fit_rows, power_sizes, render_csv, run_bench
from .config import Config, load_config, parse_epsilon
from .errors import (
    DivergenceError,
    InvalidConfig,
    InvariantViolation,
    ParseError,
    PersistenceError,
)
from .persistence import load_tree, save_tree
from .pst import PrioritySearchTree
from .runner import EventLog, WorkloadRunner
from .workload import generate_workload, read_workload, render_workload

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")


def _config_from_args(args: argparse.Namespace) -> Config:
    overrides = {
        "block_size": args.block_size,
        "epsilon": args.epsilon,
        "memory": args.memory,
        "alpha": args.alpha,
        "payload_size": args.payload_size,
    }
    return load_config(path=args.config, overrides=overrides, env_file=args.env_file)


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    if args.workload is not None:
        ops = read_workload(args.workload)
    else:
        ops = generate_workload(args.ops, seed=args.seed)

    if args.load is not None:
        # B and epsilon come from the file unless set explicitly; M may always be overridden.
        explicit = args.block_size is not None or args.config is not None
        load_cfg = cfg if explicit else None
        source = args.load
        memory = args.memory

        def make_tree() -> PrioritySearchTree:
            return load_tree(source, load_cfg, memory=memory)

    else:

        def make_tree() -> PrioritySearchTree:
            return PrioritySearchTree(cfg)

    runner = WorkloadRunner(
        make_tree,
        oracle=args.oracle,
        check_every=args.check_every,
        list_points=args.list_points,
        events=EventLog(args.events),
    )
    report = runner.run(ops)
    if args.save is not None and runner.tree is not None:
        save_tree(runner.tree, args.save)
    _emit(report.to_json(include_timing=args.timing), args.out)
    return EXIT_OK


def _cmd_bench(args: argparse.Namespace) -> int:
    block_sizes = args.block_size or [16]
    epsilons = [parse_epsilon(e) for e in (args.epsilon or ["1/2"])]
    events = EventLog(args.events)
    rows = []
    for row in run_bench(
        args.mode,
        block_sizes,
        epsilons,
        power_sizes(args.log_n_min, args.log_n_max),
        ops=args.ops,
        memory=args.memory,
        output_size=args.output_size,
        unsorted=args.unsorted,
        seed=args.seed,
    ):
        events.log_event("bench_row", **dict(zip(CSV_HEADER, row.as_csv())))
        rows.append(row)
    _emit(render_csv(rows), args.out)
    if args.fit:
        if len(rows) < 2:
            print("fit skipped: fewer than two rows", file=sys.stderr)
        else:
            print(fit_rows(rows, unsorted=args.unsorted).describe(), file=sys.stderr)
    return EXIT_OK


def _cmd_generate(args: argparse.Namespace) -> int:
    ops = generate_workload(
        args.ops,
        seed=args.seed,
        coord_range=args.coord_range,
        check_every=args.check_every,
        stats_every=args.stats_every,
    )
    _emit(render_workload(ops), args.out)
    return EXIT_OK


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--block-size", type=int, default=None, help="Records per block (B).")
    parser.add_argument("--epsilon", type=str, default=None, help="Trade-off exponent as p/q.")
    parser.add_argument("--memory", type=int, default=None, help="Internal memory in records (M).")
    parser.add_argument("--alpha", type=int, default=None, help="Minimum sample slack.")
    parser.add_argument(
        "--payload-size", type=int, default=None, help="Payload bytes per saved point."
    )
    parser.add_argument("--config", type=Path, default=None, help="YAML config file.")
    parser.add_argument(
        "--env-file", type=Path, default=Path(".env"), help="dotenv file (default: ./.env)."
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="buffered-pst")
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Library log level on stderr.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    run_parser = subparsers.add_parser("run", help="Execute a workload file.")
    run_parser.add_argument(
        "workload",
        type=Path,
        nargs="?",
        default=None,
        help="Workload file; a random one is generated from --seed when omitted.",
    )
    _add_config_flags(run_parser)
    run_parser.add_argument("--seed", type=int, default=0, help="Seed for a generated workload.")
    run_parser.add_argument("--ops", type=int, default=1000, help="Length of a generated workload.")
    run_parser.add_argument(
        "--oracle", action="store_true", help="Check every answer against a brute-force set."
    )
    run_parser.add_argument(
        "--check-every", type=int, default=0, help="Run the invariant walker every n ops."
    )
    run_parser.add_argument("--out", type=Path, default=None, help="Report path (default: stdout).")
    run_parser.add_argument("--save", type=Path, default=None, help="Write the final tree here.")
    run_parser.add_argument("--load", type=Path, default=None, help="Start from a saved tree.")
    run_parser.add_argument("--events", type=Path, default=None, help="JSONL event log path.")
    run_parser.add_argument(
        "--list-points", action="store_true", help="Include reported points in the report."
    )
    run_parser.add_argument("--timing", action="store_true", help="Include wall time.")

    bench_parser = subparsers.add_parser("bench", help="Run a scaling experiment, CSV on stdout.")
    bench_parser.add_argument("mode", choices=MODES)
    bench_parser.add_argument(
        "--block-size", type=int, action="append", default=None, help="Repeatable."
    )
    bench_parser.add_argument(
        "--epsilon", type=str, action="append", default=None, help="Repeatable."
    )
    bench_parser.add_argument("--memory", type=int, default=None, help="M (default: 64*B).")
    bench_parser.add_argument("--log-n-min", type=int, default=12)
    bench_parser.add_argument("--log-n-max", type=int, default=16)
    bench_parser.add_argument(
        "--ops", type=int, default=1000, help="Operations per row; update rows finish their epoch."
    )
    bench_parser.add_argument(
        "--output-size", type=int, default=None, help="Target K for query and top-k (default: B)."
    )
    bench_parser.add_argument(
        "--unsorted", action="store_true", help="Shuffle input for construction-scaling."
    )
    bench_parser.add_argument("--seed", type=int, default=0)
    bench_parser.add_argument("--out", type=Path, default=None, help="CSV path (default: stdout).")
    bench_parser.add_argument("--fit", action="store_true", help="Print the regression to stderr.")
    bench_parser.add_argument("--events", type=Path, default=None, help="JSONL event log path.")

    gen_parser = subparsers.add_parser("generate", help="Write a seeded random workload.")
    gen_parser.add_argument("--ops", type=int, default=1000)
    gen_parser.add_argument("--seed", type=int, default=0)
    gen_parser.add_argument("--coord-range", type=int, default=1 << 20)
    gen_parser.add_argument("--check-every", type=int, default=0, help="Insert CHECK every n ops.")
    gen_parser.add_argument("--stats-every", type=int, default=0, help="Insert STATS every n ops.")
    gen_parser.add_argument("--out", type=Path, default=None, help="Path (default: stdout).")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(list(argv) if argv is not None else None)
    logging.basicConfig(level=getattr(logging, args.log_level), stream=sys.stderr)

    handlers = {"run": _cmd_run, "bench": _cmd_bench, "generate": _cmd_generate}
    try:
        return handlers[args.command](args)
    except (DivergenceError, InvariantViolation) as exc:
        print(str(exc), file=sys.stderr, flush=True)
        if isinstance(exc, DivergenceError):
            for line in exc.trace:
                print(f"  {line}", file=sys.stderr)
        return EXIT_FAILED
    except (ParseError, InvalidConfig, PersistenceError) as exc:
        print(str(exc), file=sys.stderr, flush=True)
        return EXIT_USAGE
    except OSError as exc:
        print(str(exc), file=sys.stderr, flush=True)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
