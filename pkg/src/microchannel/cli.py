"""Command line entry point: ``run``, ``validate`` and ``schema``."""

from __future__ import annotations

import argparse
import json
import sys

from .config import SCHEMA, ConfigError, load_config
from .errors import CapacityExceeded, MicrochannelError, NumericalFailure

EXIT_ERROR = 1
EXIT_SCHEMA = 2
EXIT_CAPACITY = 3
EXIT_NUMERICAL = 4


def _parser():
    p = argparse.ArgumentParser(prog="microchannel",
                                description="Microchannel decoherence laboratory")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    r.add_argument("--seed", type=int, default=None)
    v = sub.add_parser("validate", help="check a configuration against the schema")
    v.add_argument("--config", required=True)
    sub.add_parser("schema", help="print the configuration JSON schema")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "schema":
        print(json.dumps(SCHEMA, indent=2))
        return 0
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.command == "validate":
        print(f"{args.config}: ok ({cfg.experiment})")
        return 0

    from .runner import run
    out = args.out or cfg.raw.get("output_dir") or f"runs/{cfg.experiment}"
    if args.seed is not None and args.seed < 0:
        print("seed must be non-negative", file=sys.stderr)
        return EXIT_SCHEMA
    try:
        summary = run(cfg, out, args.seed)
    except CapacityExceeded as exc:
        print(f"capacity exceeded: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except MicrochannelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    failed = [c["name"] for c in summary["checks"] if not c["pass"]]
    print(f"{cfg.experiment}: wrote {out} ({len(summary['checks'])} checks, "
          f"{len(failed)} failed{': ' + ', '.join(failed) if failed else ''})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
