"""Command-line entry point: ``intention-tuning <command> [flags]``.

Errors are reported on stderr as one JSON object ``{"error", "message"}``
and a nonzero exit status.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .config import ExperimentConfig
from .errors import ArtifactError

COMMANDS = ("synth", "probe", "train", "generate", "evaluate", "compare", "heatmap")

EXIT_USAGE = 2
EXIT_FAILURE = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("UsageError", message, EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="intention-tuning", description="Layer-selective adapter fine-tuning for text revision.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value experiment file")
        p.add_argument("--seed", type=int, help="run seed (unsigned 64-bit)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--strategy", help="intention-tuning, ir, lisa, ist or full")
        if name == "evaluate":
            p.add_argument("--hypotheses", help="JSONL of source/hypothesis/references records")
        if name == "compare":
            p.add_argument("--timing", action="store_true",
                           help="add a wall-time column (makes the table non-reproducible)")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out:
        changes["out_dir"] = str(Path(args.out))
    if args.strategy:
        changes["strategy"] = args.strategy
    return cfg.replace(**changes) if changes else cfg


def _fail(kind: str, message: str, code: int = EXIT_FAILURE):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    raise SystemExit(code)


def _jsonable(result):
    if isinstance(result, dict):
        return {k: _jsonable(v) for k, v in result.items() if not hasattr(v, "to_dict")}
    return str(result)


def run(args) -> object:
    cfg = resolve_config(args)
    if args.command == "synth":
        return harness.cmd_synth(cfg)
    if args.command == "probe":
        return harness.cmd_probe(cfg)
    if args.command == "train":
        return harness.cmd_train(cfg)
    if args.command == "generate":
        return harness.cmd_generate(cfg)
    if args.command == "evaluate":
        return harness.cmd_evaluate(cfg, args.hypotheses)
    if args.command == "compare":
        return harness.cmd_compare(cfg, timing=args.timing)
    return harness.cmd_heatmap(cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = run(args)
    except ArtifactError as exc:
        _fail(type(exc).__name__, str(exc))
    except OSError as exc:
        _fail("IOError", str(exc))
    print(json.dumps(_jsonable(result), indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
