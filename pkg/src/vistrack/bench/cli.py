"""Command line entry point.

Exit codes: 0 success, 1 planner hard failure (collision, unhandled error or
a failed self-check), 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from ..minco import Trajectory
from ..world import Cylinder, build_grid
from .metrics import read_plan_log, report
from .scenario import BUILTIN_SCENARIOS, ConfigError, ScenarioConfig, load_scenario
from .selfcheck import run_checks
from .sim import replay, run_scenario

log = logging.getLogger("vistrack")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def _scenario(args: argparse.Namespace) -> ScenarioConfig:
    ref = args.scenario
    if ref is None:
        raise ConfigError("--scenario is required")
    if ref in BUILTIN_SCENARIOS and not Path(ref).exists():
        sc = BUILTIN_SCENARIOS[ref]()
    else:
        if not Path(ref).is_file():
            raise ConfigError(f"scenario file {ref} not found (built-ins: {', '.join(BUILTIN_SCENARIOS)})")
        sc = load_scenario(ref)
    return sc.with_overrides(seed=args.seed, rate=args.rate, duration=args.duration)


def _print_summary(summary: dict) -> None:
    print(json.dumps({k: summary[k] for k in ("scenario", "frames", "counters", "fractions", "stage_ms",
                                               "statuses", "hard_failure")}, indent=2, default=str))


def cmd_run(args: argparse.Namespace) -> int:
    sc = _scenario(args)
    out = Path(args.out or f"runs/{sc.name}")
    grid = build_grid(sc.resolved_world())
    log.info("running %s: %d frames at %.1f Hz", sc.name, sc.frames, sc.rate)
    metrics = run_scenario(sc, grid)
    report(metrics, out)
    (out / "scenario.yaml").write_text(yaml.safe_dump(sc.to_dict(), sort_keys=False))
    (out / "timing.md").write_text(metrics.timing_table() + "\n")
    _print_summary(metrics.summary())
    if metrics.hard_failure or metrics.counters["collision"]:
        return EXIT_FAILURE
    return EXIT_OK


def cmd_world(args: argparse.Namespace) -> int:
    sc = _scenario(args)
    out = Path(args.out or f"worlds/{sc.name}")
    out.mkdir(parents=True, exist_ok=True)
    world = sc.resolved_world()
    grid = build_grid(world)
    np.savez_compressed(out / "grid.npz", raw=grid.raw, inflated=grid.occupied, origin=grid.origin,
                        resolution=grid.resolution)
    obstacles = []
    for ob in grid.obstacles:
        if isinstance(ob, Cylinder):
            obstacles.append({"cylinder": {"center": list(ob.center), "radius": ob.radius,
                                           "z_min": ob.z_min, "z_max": ob.z_max}})
        else:
            obstacles.append({"box": {"min": list(ob.lo), "max": list(ob.hi)}})
    (out / "world.yaml").write_text(yaml.safe_dump({"world": world.to_dict(), "obstacles": obstacles},
                                                   sort_keys=False))
    print(json.dumps({"dims": list(grid.dims), "resolution": grid.resolution, "obstacles": len(obstacles),
                      "occupied_cells": int(grid.raw.sum()), "inflated_cells": int(grid.occupied.sum()),
                      "out": str(out)}, indent=2))
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    sc = _scenario(args)
    src = Path(args.trajectory)
    if not src.is_file():
        raise ConfigError(f"trajectory file {src} not found")
    try:
        if src.suffix == ".jsonl":
            plans = read_plan_log(src)
        else:
            data = json.loads(src.read_text())
            start = float(data.get("start_time", 0.0))
            plans = Trajectory.from_dict(data.get("trajectory", data))
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read trajectory file {src}: {exc}") from exc
    if isinstance(plans, Trajectory):
        metrics = replay(sc, plans, start_time=start)
    else:
        metrics = replay(sc, plans)
    out = Path(args.out or f"runs/{sc.name}_replay")
    paths = report(metrics, out)
    _print_summary(metrics.summary())
    log.info("frame records written to %s", paths.get("frames"))
    return EXIT_FAILURE if metrics.counters["collision"] else EXIT_OK


def cmd_check(args: argparse.Namespace) -> int:
    results = run_checks(problems=args.problems, seed=args.seed or 0)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vistrack", description="Simulate and score target-tracking runs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, scenario: bool = True) -> None:
        if scenario:
            p.add_argument("--scenario", help="scenario YAML file or built-in name "
                                              f"({', '.join(BUILTIN_SCENARIOS)})")
            p.add_argument("--out", help="output directory")
            p.add_argument("--rate", type=float, help="replan and frame rate override (Hz)")
            p.add_argument("--duration", type=float, help="simulated duration override (s)")
        p.add_argument("--seed", type=int, help="random seed override")

    p = sub.add_parser("run", help="simulate a scenario and write metrics")
    common(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("world", help="generate a world and export its grid")
    common(p)
    p.set_defaults(func=cmd_world)
    p = sub.add_parser("replay", help="frame records for a trajectory file or plan log")
    p.add_argument("trajectory", help="trajectory JSON or plans.jsonl from a run")
    common(p)
    p.set_defaults(func=cmd_replay)
    p = sub.add_parser("check", help="self-test gradients and invariants")
    common(p, scenario=False)
    p.add_argument("--problems", type=int, default=10, help="random problems for the gradient check")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
