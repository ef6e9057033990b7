"""Command-line interface: ``pobstacle {solve,sweep,probe,oracle,report}``."""

from __future__ import annotations

import argparse
import sys

from ..oracle import OracleError
from ..solvers import SolverError
from .commands import (AXES, PROBES, UsageError, cmd_oracle, cmd_probe, cmd_report, cmd_solve,
                       cmd_sweep, say)
from .instance_file import InstanceFileError

__all__ = ["main", "build_parser"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _instance_args(p, grid=True):
    p.add_argument("--instance", required=True,
                   help="instance file or builtin:NAME")
    p.add_argument("--config", help="config file with [solver]/[probes] overrides")
    p.add_argument("--out", default="pobstacle_out", help="output directory")
    p.add_argument("--seed", type=int, default=0, help="seed for randomized probes")
    if grid:
        p.add_argument("--grid", type=int, help="GRID nodes along the first spatial axis (h = width / (GRID - 1))")


def build_parser() -> argparse.ArgumentParser:
    from .. import __version__

    parser = _Parser(prog="pobstacle", description="Parabolic bilateral obstacle problems.")
    parser.add_argument("--version", action="version", version=f"pobstacle {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("solve", help="solve an instance")
    _instance_args(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="sweep delta, eps or h")
    _instance_args(p)
    p.add_argument("--axis", required=True, choices=AXES)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("probe", help="run a regularity probe")
    _instance_args(p)
    p.add_argument("--probe", required=True, help=f"one of: {', '.join(PROBES)}")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("oracle", help="check against brute force or a manufactured solution")
    _instance_args(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("report", help="aggregate JSON/CSV outputs")
    p.add_argument("inputs", nargs="*", help="output directories to scan (default: --out)")
    p.add_argument("--out", default="pobstacle_out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return int(args.func(args))
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except SolverError as exc:
        say(f"solver failure: {exc}", stream=sys.stderr, ok=False)
        return 2
    except (UsageError, InstanceFileError, OracleError, ValueError, OSError) as exc:
        print(f"pobstacle: error: {exc}", file=sys.stderr)
        return 1
