"""Command line entry point ``mde``.

    mde run <config> [--out DIR] [--reps N] [--seed S] [--threads K]
    mde normality <config> [...]
    mde rates <config> [--out DIR]
    mde replay <manifest.json> --out DIR [--threads K]

Exit status: 0 on success, 1 on config errors, 2 when more than 20% of the
replications failed.
"""
from __future__ import annotations

import argparse
import json
import sys

from .experiments import (
    EXIT_CONFIG,
    ConfigError,
    default_threads,
    load_config,
    normality_study,
    rates_study,
    replay,
    run,
    with_overrides,
)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mde", description="Minimum distance estimation experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run", "normality", "rates"):
        p = sub.add_parser(name)
        p.add_argument("config")
        p.add_argument("--out")
        p.add_argument("--reps", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, default=None)
    p = sub.add_parser("replay")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=None)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    threads = args.threads or default_threads()
    try:
        if args.command == "replay":
            outcome = replay(args.manifest, args.out, threads)
        else:
            cfg = with_overrides(load_config(args.config), args.reps, args.seed, args.out)
            if args.command == "normality":
                outcome = normality_study(cfg, threads)
            elif args.command == "rates":
                if cfg.experiment != "rates":
                    raise ConfigError("mde rates needs experiment = rates")
                outcome = rates_study(cfg)
            else:
                outcome = run(cfg, threads)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"mde: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(outcome.summary, indent=2, sort_keys=True))
    print(f"artifacts written to {outcome.out_dir}", file=sys.stderr)
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
