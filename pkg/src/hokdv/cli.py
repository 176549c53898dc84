"""Command-line entry point: ``hokdv <subcommand> [--config FILE] [--set key=value ...]``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .config import SCHEMAS, read_config, schema_help
from .errors import ConfigError
from .runner import EXIT_CONFIG, EXIT_FAIL, EXIT_NUMERIC, make_run_dir, run_jobs

DESCRIPTIONS = {
    "simulate": "nonlinear or linear evolution with conservation diagnostics",
    "control": "linear exact control by the moment method, with refinement",
    "stabilize": "closed-loop decay under simple damping or the lambda gain",
    "global-control": "damp, connect by local control, return; then verify un-cut",
    "verify-lemmas": "gap condition and h_j identity suites",
    "strichartz": "counting-sum plateau scan and L4 / X^{0,b} ensembles",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hokdv", description="Higher-order KdV control toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SCHEMAS:
        p = sub.add_parser(name, help=DESCRIPTIONS[name], description=DESCRIPTIONS[name],
                           epilog="config keys (flat TOML):\n" + schema_help(name),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", type=Path, help="TOML config file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--sweep", metavar="KEY=V1,V2,...",
                       help="run one job per value; HOKDV_THREADS caps parallel jobs")
        p.add_argument("--outdir", type=Path, default=Path("runs"),
                       help="root directory for <subcommand>-<timestamp>/ outputs")
    return parser


def _configs(args) -> list:
    base = read_config(args.subcommand, args.config, args.overrides)
    if not args.sweep:
        return [base]
    key, raw = (s.strip() for s in args.sweep.split("=", 1)) if "=" in args.sweep else (args.sweep, "")
    if not raw:
        raise ConfigError(f"--sweep {args.sweep!r} is not of the form key=v1,v2,...")
    out = []
    for item in raw.split(","):
        out.append(read_config(args.subcommand, args.config, args.overrides + [f"{key}={item}"]))
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        configs = _configs(args)
        run_dir = make_run_dir(args.outdir, args.subcommand)
        t0 = time.perf_counter()
        results = run_jobs(args.subcommand, configs, run_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    codes = [c for c, _ in results]
    code = EXIT_NUMERIC if EXIT_NUMERIC in codes else (EXIT_FAIL if EXIT_FAIL in codes else 0)
    verdict = {0: "PASS", EXIT_FAIL: "FAIL", EXIT_NUMERIC: "NUMERIC ERROR"}[code]
    print(f"{verdict}: {run_dir} ({time.perf_counter() - t0:.1f} s)")
    return code


if __name__ == "__main__":
    sys.exit(main())
