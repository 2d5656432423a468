"""Command-line entry point: ``pmtool <kind> --config PATH``."""

from __future__ import annotations

import argparse
import sys

from .errors import NumericalFailure, ValidationError
from .harness import KINDS, ExperimentConfig, run, validate, verify

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pmtool", description="Sequential intermittent map experiments.")
    sub = ap.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind, help=f"run the {kind} experiment")
        sp.add_argument("--config", required=True, help="key = value configuration file")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--threads", type=int, help="worker threads (default: config, then PMTOOL_THREADS)")
        sp.add_argument("--out", help="override the output directory")
    sp = sub.add_parser("verify", help="re-run a manifest and compare output digests")
    sp.add_argument("manifest")
    sp.add_argument("--threads", type=int)
    sp.add_argument("--out", help="directory for the re-run (default: a temporary directory)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.kind == "verify":
            ok = verify(args.manifest, args.out, args.threads)
            print("digests match" if ok else "digests differ")
            return EXIT_OK if ok else 1
        cfg = ExperimentConfig.from_file(args.config)
        if cfg.kind != args.kind:
            print(f"config kind {cfg.kind!r} overridden by command {args.kind!r}", file=sys.stderr)
            cfg.kind = args.kind
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.output_path = args.out
        problems = validate(cfg)
        if problems:
            for v in problems:
                print(f"invalid: {v}", file=sys.stderr)
            return EXIT_INVALID
        manifest = run(cfg, args.threads)
    except ValidationError as exc:
        for v in exc.violations:
            print(f"invalid: {v}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalFailure as exc:
        print(f"numerical failure [{exc.invariant}]: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for name, digest in sorted(manifest.outputs.items()):
        print(f"{name}  sha256={digest}")
    print(f"manifest.json  wall_time={manifest.wall_time:.2f}s")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
