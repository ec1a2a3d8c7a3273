"""Command-line entry point.

Subcommands ``forward``, ``reverse``, ``verify`` and ``compare-sde`` each
take ``--config`` (a file path or a shipped config name), ``--out`` (output
directory, overriding the config), ``--seed`` (overrides every section
seed) and ``--quiet``.

Exit codes: 0 success; 1 a gated verification check failed; 2 invalid
configuration; 3 runtime failure.
"""

from __future__ import annotations

import argparse
import sys

from .config import load_config
from .errors import ConfigError, PHDiffusionError
from .runner import compare_sde, run_forward, run_reverse, run_verify


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True,
                        help="config file path or shipped name (ou1d, quartic2d)")
    parser.add_argument("--out", default=None, help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, default=None, help="override every section seed")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phdiff",
        description="Port-Hamiltonian diffusion experiments: forward SDE ensembles, "
                    "reverse-ODE sampling, and structural verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("forward", "simulate the forward diffusion ensemble"),
        ("reverse", "integrate the reverse sampling ODE"),
        ("verify", "run the configured verification gates"),
        ("compare-sde", "compare the score-driven reverse drift with the closed-loop field"),
    ):
        _add_common(sub.add_parser(name, help=text))
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = config.with_seed(args.seed)
        if args.command == "forward":
            run_forward(config, args.out, args.quiet)
            return 0
        if args.command == "reverse":
            run_reverse(config, args.out, args.quiet)
            return 0
        if args.command == "verify":
            _, code = run_verify(config, args.out, args.quiet)
            return code
        _, code = compare_sde(config, args.out, args.quiet)
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (PHDiffusionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
