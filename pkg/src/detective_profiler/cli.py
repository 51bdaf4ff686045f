"""Command-line entry point.

Exit codes: 0 success, 1 phase or artifact failure, 2 configuration error.
Reports go to standard output; diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from fractions import Fraction

from .config import DEFAULT_CONFIG_PATH, PipelineConfig, load_config
from .errors import ConfigError, ProfilerError
from .gateway import MODES
from .report import FORMATS, render_confusion_matrix, render_eval_report, render_trait_table
from .runner import PHASES, Runner, load_profiles, load_report
from .store import ArtifactStore

logger = logging.getLogger("detective_profiler")

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2


def _threshold(text: str) -> Fraction:
    try:
        value = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number or fraction: {text!r}") from None
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError("threshold must be in (0, 1]")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=DEFAULT_CONFIG_PATH, help="pipeline JSON config (default: %(default)s)")
    common.add_argument("--run-id", default="default", help="run directory name under runs_dir")
    common.add_argument("--runs-dir", help="override the config's runs_dir")
    common.add_argument("--mode", choices=MODES, help="override the config's gateway mode")
    common.add_argument("--threshold", type=_threshold, help="consensus threshold, e.g. 0.2 or 1/5")
    common.add_argument("--force", action="store_true", help="overwrite existing artifacts")
    common.add_argument("--format", choices=FORMATS, default="markdown", help="report format")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="detective-profiler",
        description="Multi-model character trait profiling with consensus filtering and reverse identification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "describe": "phase 1: generate descriptions with every describer model",
        "extract": "phase 2: extract bullet traits from each description",
        "group": "phase 3: group traits semantically and attach provenance",
        "synthesize": "phase 4: score groups and keep those reaching the threshold",
        "validate": "phase 5: reverse identification and accuracy report",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    sub.add_parser("run-all", parents=[common], help="run every phase, resuming from existing artifacts")
    rep = sub.add_parser("report", parents=[common], help="render tables from a finished run")
    rep.add_argument("--table", choices=("traits", "accuracy", "confusion", "all"), default="all")
    return parser


def _load(args: argparse.Namespace) -> PipelineConfig:
    config = load_config(args.config)
    return config.with_overrides(mode=args.mode, threshold=args.threshold, runs_dir=args.runs_dir)


def _report(args: argparse.Namespace, store: ArtifactStore) -> str:
    parts = []
    if args.table in ("traits", "all"):
        parts.append(render_trait_table(load_profiles(store, args.run_id), args.format))
    if args.table in ("accuracy", "all"):
        parts.append(render_eval_report(load_report(store, args.run_id), args.format))
    elif args.table == "confusion":
        parts.append(render_confusion_matrix(load_report(store, args.run_id), args.format))
    return "\n".join(parts)


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = _load(args)
        store = ArtifactStore(config.runs_dir)
        if args.command == "report":
            sys.stdout.write(_report(args, store))
            return EXIT_OK
        runner = Runner(config, args.run_id, store=store, force=args.force)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProfilerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE

    try:
        if args.command == "run-all":
            runner.run(PHASES, resume=True)
        else:
            runner.run([args.command], resume=False)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProfilerError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE

    print(f"run {args.run_id}: computed {', '.join(runner.computed) or 'nothing'}", file=sys.stderr)
    if args.command in ("run-all", "validate"):
        sys.stdout.write(render_eval_report(load_report(store, args.run_id), args.format))
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    return cmd_run(args)


if __name__ == "__main__":
    sys.exit(main())
