"""Command line entry point: ``hybridsim {run,sweep,synth}``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .harness import ConfigError, load_config, parse_planner, run_experiment, sensitivity_sweep
from .loop import ConfigInvalid
from .workload import InvalidParams, SlashdotParams, synthesize_slashdot, write_trace

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _intervals(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad interval list {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("intervals must be positive integers")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hybridsim", description="Hybrid adaptation planning simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="compare planners and write NAU tables")
    r.add_argument("--config", required=True)
    r.add_argument("--planner", action="append", help="planner to include (repeatable)")
    r.add_argument("--out", help="output directory")
    r.add_argument("--seed", type=int, help="base seed")
    r.add_argument("--replicas", type=int)

    s = sub.add_parser("sweep", help="NAU of HypeZonExternal across sampling intervals")
    s.add_argument("--config", required=True)
    s.add_argument("--intervals", type=_intervals)
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--replicas", type=int)

    y = sub.add_parser("synth", help="write a synthetic slashdot trace")
    y.add_argument("--base-rate", type=float, required=True)
    y.add_argument("--surges", type=int, required=True)
    y.add_argument("--amplitude", type=float, default=10.0)
    y.add_argument("--surge-duration", type=int, default=300)
    y.add_argument("--duration", type=int, default=3600)
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--out", required=True)
    return p


def _overrides(cfg, args):
    changes = {}
    if getattr(args, "planner", None):
        changes["planners"] = tuple(parse_planner(p) for p in args.planner)
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "replicas", None) is not None:
        changes["replicas"] = args.replicas
    return dataclasses.replace(cfg, **changes) if changes else cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "synth":
            params = SlashdotParams(args.base_rate, args.surges, args.amplitude, args.surge_duration,
                                    args.duration, args.seed)
            trace = synthesize_slashdot(params)
            write_trace(trace, args.out)
            print(f"wrote {args.out}: {trace.duration_s} s, {trace.total_arrivals} requests")
            return EXIT_OK
        cfg = _overrides(load_config(args.config), args)
        if args.command == "run":
            table = run_experiment(cfg, args.out)
            print(table.format())
        else:
            row = sensitivity_sweep(cfg, args.intervals, args.out)
            print(f"{'I':>4}{'mean_net':>12}{'NAU':>8}")
            for i, m in row.means.items():
                print(f"{i:>4}{m:>12.2f}{row.nau[i]:>8.3f}")
        return EXIT_OK
    except (ConfigError, ConfigInvalid, InvalidParams) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - surface any simulation failure as a runtime error
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
