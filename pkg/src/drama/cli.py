"""Command line entry point: ``drama run`` and ``drama suite``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness import Allocator, load_manifest, load_scenario, run_suite, summarize
from .sim import ConfigError

EXIT_CONFIG = 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drama", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log scheduler warnings")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run episodes of one scenario")
    run.add_argument("--scenario", required=True, type=Path)
    run.add_argument("--allocator", choices=[a.value for a in Allocator], default=None,
                     help="defaults to the scenario's allocator")
    run.add_argument("--seed", type=int, default=None,
                     help="first seed; episode k uses seed + k (default: scenario seed)")
    run.add_argument("--episodes", type=int, default=1)
    run.add_argument("--out", required=True, type=Path)
    run.add_argument("--trace", action="store_true", help="write per-episode trace logs")
    run.add_argument("--config", type=Path, help="JSON control-plane settings to override")

    suite = sub.add_parser("suite", help="run a manifest of scenarios and allocators")
    suite.add_argument("--manifest", required=True, type=Path)
    suite.add_argument("--out", required=True, type=Path)
    suite.add_argument("--trace", action="store_true")
    return p


def _report(results) -> None:
    for s in summarize(results):
        ts = "-" if s.median_TS is None else f"{s.median_TS:g}"
        as_ = "-" if s.median_AS is None else f"{s.median_AS:g}"
        print(f"{s.scenario:<12} {s.allocator:<10} SR={s.SR:.2f} "
              f"({s.successes}/{s.episodes})  median AS={as_}  median TS={ts}")


def _cmd_run(args: argparse.Namespace) -> None:
    spec = load_scenario(args.scenario)
    if args.config is not None:
        try:
            block = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError("/config", f"cannot read config: {e}") from None
        from .control import load_control_config
        load_control_config(block)
        spec = spec.with_(config={**spec.config, **block})
    if args.episodes < 1:
        raise ConfigError("/episodes", "need at least one episode")
    base = spec.seed if args.seed is None else args.seed
    seeds = [base + k for k in range(args.episodes)]
    allocs = [Allocator.parse(args.allocator)] if args.allocator else None
    _report(run_suite([spec], seeds, allocs, out=args.out, trace=args.trace))


def _cmd_suite(args: argparse.Namespace) -> None:
    specs, allocators, seeds = load_manifest(args.manifest)
    _report(run_suite(specs, seeds, allocators, out=args.out, trace=args.trace))


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            _cmd_run(args)
        else:
            _cmd_suite(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
