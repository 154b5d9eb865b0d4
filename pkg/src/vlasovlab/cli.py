"""Command-line front end.

Verbs: simulate <config>, converge <config>, verify <bundle>, print-schema.
Exit codes: 0 ok, 2 config error, 3 collision, 4 invariant violation.
"""

from __future__ import annotations

import argparse
import sys

from .harness import (
    ConfigError,
    convergence_study,
    parse_config,
    print_schema,
    run_experiment,
    verify_bundle,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_COLLISION = 3
EXIT_INVARIANT = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vlasovlab",
        description="Particle-method laboratory for singular mean-field dynamics",
    )
    sub = parser.add_subparsers(dest="verb", required=True)
    sim = sub.add_parser("simulate", help="run the simulation suite for a config")
    sim.add_argument("config")
    conv = sub.add_parser("converge", help="particle-vs-grid convergence study")
    conv.add_argument("config")
    ver = sub.add_parser("verify", help="re-check all invariant reports of a bundle")
    ver.add_argument("bundle")
    sub.add_parser("print-schema", help="print the config file schema")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.verb == "print-schema":
        print(print_schema(), end="")
        return EXIT_OK
    if args.verb == "verify":
        problems = verify_bundle(args.bundle)
        if problems:
            for p in problems:
                print(f"violation: {p}", file=sys.stderr)
            return EXIT_INVARIANT
        print("bundle ok")
        return EXIT_OK
    try:
        config = parse_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    progress = lambda msg: print(msg, file=sys.stderr)  # noqa: E731
    if args.verb == "simulate":
        summary = run_experiment(config, progress=progress)
        if summary.get("collision"):
            c = summary["collision"]
            print(
                f"collision: N={c['N']} pair={tuple(c['pair'])} at t={c['time']:.6g}",
                file=sys.stderr,
            )
            return EXIT_COLLISION
        print(f"bundle written to {config.out_dir}")
        return EXIT_OK
    if args.verb == "converge":
        try:
            convergence_study(config, progress=progress)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"study written to {config.out_dir}")
        return EXIT_OK
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
