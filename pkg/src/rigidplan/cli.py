"""Command-line entry point.

Exit codes: 0 success, 2 validation error, 3 planning failed, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .experiment import build_problem, import_trajectories, run_compare, run_plan
from .localization import LocalizationError
from .planner import PlanningError, validate_solution
from .rigidity import NoiseModel, RigidityError, network_rigidity
from .scenario import ScenarioError, bundled_scenario_paths, load_scenario

EXIT_OK, EXIT_VALIDATION, EXIT_PLANNING, EXIT_IO = 0, 2, 3, 4


def _seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}")


def _scenario_paths(args) -> list[Path]:
    paths = [Path(p) for p in (args.scenario or [])]
    if getattr(args, "bundled", False):
        paths += bundled_scenario_paths()
    if not paths:
        raise ScenarioError("no scenario given (use --scenario or --bundled)")
    return paths


def _load_positions(path: Path) -> np.ndarray:
    text = path.read_text()
    if text.lstrip().startswith(("[", "{")):
        data = json.loads(text)
        if isinstance(data, dict):
            data = data["positions"]
        return np.asarray(data, dtype=float)
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        try:
            rows.append((float(parts[0]), float(parts[1])))
        except ValueError:
            continue  # header line
    return np.asarray(rows, dtype=float)


def cmd_plan(args) -> int:
    scenario = load_scenario(args.scenario)
    _, report = run_plan(scenario, args.algorithm, args.seed, args.out,
                         range(args.loc_seeds), args.min_rigidity, args.format)
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def cmd_compare(args) -> int:
    scenarios = [load_scenario(p) for p in _scenario_paths(args)]
    table = run_compare(scenarios, args.seeds, range(args.loc_seeds), args.min_rigidity, args.jobs)
    if args.out:
        Path(args.out).write_text(table.to_json(include_timing=not args.no_timing))
    print(table.to_json(include_timing=not args.no_timing) if args.json else table.to_text(), end="")
    return EXIT_OK


def cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    graph, problem = build_problem(scenario, args.min_rigidity)
    trajectories = import_trajectories(args.trajectories, graph)
    report = validate_solution(trajectories, problem)
    print(json.dumps({
        "passed": report.passed,
        "collisions": report.num_collisions,
        "invalid_moves": report.num_invalid_moves,
        "nonrigid_timesteps": report.num_nonrigid,
        "percent_rigid": report.percent_rigid,
        "endpoint_errors": report.endpoint_errors,
        "rigidity": [s.rigidity_eigenvalue for s in report.steps],
    }, indent=2))
    return EXIT_OK if report.passed else EXIT_VALIDATION


def cmd_rigidity(args) -> int:
    positions = _load_positions(Path(args.positions))
    threshold = 0.1 if args.min_rigidity is None else args.min_rigidity
    verdict = network_rigidity(positions, args.sensing_radius, NoiseModel(args.noise, args.sigma), threshold)
    print(json.dumps({"rigidity_eigenvalue": verdict.rigidity_eigenvalue,
                      "is_rigid": verdict.is_rigid, "threshold": verdict.threshold}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rigidplan", description=__doc__.splitlines()[0])
    parser.add_argument("--min-rigidity", type=float, default=None,
                        help="override the scenario's minimum rigidity")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="plan one scenario with one algorithm")
    p.add_argument("--scenario", required=True)
    p.add_argument("--algorithm", choices=("rcgp", "rrt"), default="rcgp")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="directory for trajectories, report and plot data")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--loc-seeds", type=int, default=20, help="localization noise seeds")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("compare", help="RCGP against RRT on one or more scenarios")
    p.add_argument("--scenario", action="append")
    p.add_argument("--bundled", action="store_true", help="include every bundled scenario")
    p.add_argument("--seeds", type=_seeds, default=[0], help="comma-separated RRT seeds")
    p.add_argument("--loc-seeds", type=int, default=20)
    p.add_argument("--jobs", type=int, default=1, help="scenarios to run concurrently")
    p.add_argument("--json", action="store_true", help="print JSON instead of the text table")
    p.add_argument("--out", default=None, help="write the JSON table here")
    p.add_argument("--no-timing", action="store_true", help="omit wall-clock fields from JSON")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("validate", help="check a trajectory file against a scenario")
    p.add_argument("--trajectories", required=True)
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("rigidity", help="rigidity eigenvalue of a set of positions")
    p.add_argument("--positions", required=True, help="CSV/whitespace x y rows or a JSON list")
    p.add_argument("--sensing-radius", type=float, required=True)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--noise", choices=("additive", "multiplicative"), default="additive")
    p.set_defaults(func=cmd_rigidity)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, RigidityError, LocalizationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except PlanningError as exc:
        detail = []
        if getattr(exc, "agent", None) is not None:
            detail.append(f"agent {exc.agent}")
        if getattr(exc, "stats", None) is not None:
            detail.append(f"{exc.stats.num_conflicts} conflicts")
        extra = f" ({', '.join(detail)})" if detail else ""
        print(f"planning failed: {exc}{extra}", file=sys.stderr)
        return EXIT_PLANNING
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
