"""``probewalk`` command line: run scenarios and self-check suites."""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import sys
from pathlib import Path

from probewalk.checks import SUITES, run_suite
from probewalk.config import ConfigError, load_config

DEFAULT_OUT = "runs"


def output_root(explicit: str | None) -> Path:
    if explicit:
        return Path(explicit)
    return Path(os.environ.get("PROBEWALK_OUT", DEFAULT_OUT))


def run_dir(root: Path, name: str, seed: int, now: _dt.datetime | None = None) -> Path:
    stamp = (now or _dt.datetime.now()).strftime("%Y%m%d-%H%M%S")
    path = root / f"{name}_seed{seed}_{stamp}"
    n = 1
    while path.exists():
        n += 1
        path = root / f"{name}_seed{seed}_{stamp}-{n}"
    return path


def cmd_run(args) -> int:
    from probewalk.sim import run_episode  # heavy import kept off the `check` path

    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"scenario.seed={args.seed}")
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    root = output_root(args.out)
    out = run_dir(root, cfg.name, cfg.seed)
    try:
        out.mkdir(parents=True)
    except OSError as exc:
        print(f"error: cannot create {out}: {exc}", file=sys.stderr)
        return 1
    result = run_episode(cfg, out)
    (root / "latest").write_text(out.name + "\n")
    if not args.quiet:
        print(json.dumps(result.summary(), indent=2, sort_keys=True))
        print(f"logs: {out}")
    return result.exit_code


def cmd_check(args) -> int:
    try:
        report = run_suite(args.suite)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 1
    print("\n".join(report.lines()))
    return 0 if report.ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="probewalk", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log planner decisions")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one episode")
    run.add_argument("config", help="scenario file")
    run.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
    run.add_argument("--out", help="output root (default $PROBEWALK_OUT or ./runs)")
    run.add_argument("--seed", type=int)
    run.add_argument("--quiet", action="store_true")
    run.set_defaults(func=cmd_run)

    check = sub.add_parser("check", help="run a self-check suite")
    # validated in cmd_check so an unknown name exits 1 rather than argparse's 2
    check.add_argument("suite", help=f"one of: {', '.join(SUITES)}")
    check.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
