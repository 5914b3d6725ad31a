"""Command-line entry point.

    nhchain gap-sweep model=NHTFI N=12 Omega=2 gamma=0:2:0.05 output=fig1.csv
    nhchain evolve --config run.cfg t_max=100

Settings from ``--config`` are read first; ``key=value`` arguments override them.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .harness import (
    COMMANDS, EXIT_USAGE, ConfigError, build_config, parse_pairs, read_config_file, run,
)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nhchain", description="Non-Hermitian spin-chain experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("settings", nargs="*", metavar="key=value")
        p.add_argument("--config", help="flat key=value settings file")
        p.add_argument("--override", action="store_true",
                       help="lift the memory and chain-length guards")
        p.add_argument("-o", "--output", help="primary output path")
    return ap


def main(argv=None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = read_config_file(args.config) if args.config else {}
        raw.update(parse_pairs(args.settings))
        if args.override:
            raw["override"] = "1"
        if args.output:
            raw["output"] = args.output
        cfg = build_config(args.command, raw)
    except (ConfigError, OSError) as exc:
        print(f"nhchain: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    res = run(cfg)
    if res.error:
        print(f"nhchain: {res.error}", file=sys.stderr)
    for path in res.files:
        print(path)
    return res.status


if __name__ == "__main__":
    sys.exit(main())
