"""Command-line entry point: ``splitrom <verb> [--config FILE] [--key value ...]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from ..errors import (
    ConfigError,
    DimensionMismatch,
    IncompatibleArtifacts,
    InvalidGeometry,
    InvalidInput,
    InvalidSolverChoice,
    MissingArtifact,
    ParseError,
    SplitromError,
)
from . import pipeline
from .config import load_config, option_names

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_MISSING = 0, 2, 3, 4

VERBS = {
    "mesh": pipeline.cmd_mesh,
    "fom": pipeline.cmd_fom,
    "pod": pipeline.cmd_pod,
    "rom-offline": pipeline.cmd_rom_offline,
    "rom": pipeline.cmd_rom,
    "hybrid": pipeline.cmd_hybrid,
    "compare": pipeline.cmd_compare,
    "report": pipeline.cmd_report,
}

_VALIDATION = (ConfigError, InvalidInput, InvalidGeometry, ParseError, DimensionMismatch, InvalidSolverChoice)
_MISSING = (MissingArtifact, IncompatibleArtifacts)


def build_parser():
    parser = argparse.ArgumentParser(prog="splitrom", description=__doc__)
    parser.add_argument("verb", choices=list(VERBS))
    parser.add_argument("--config", help="experiment file (INI sections, key = value)")
    parser.add_argument("-v", "--verbose", action="store_true")
    for key in option_names():
        parser.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None, metavar="VALUE")
    return parser


def exit_code(exc):
    if isinstance(exc, _VALIDATION):
        return EXIT_VALIDATION
    if isinstance(exc, _MISSING):
        return EXIT_MISSING
    return EXIT_NUMERICAL


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k) for k in option_names()}
    try:
        cfg = load_config(args.config, overrides)
        result = VERBS[args.verb](cfg)
    except SplitromError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    if isinstance(result, str):
        print(result, end="")
    else:
        print(json.dumps(result, indent=1, default=float))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
