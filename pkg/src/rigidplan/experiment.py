"""Experiment orchestration: run planners on scenarios, score them, export results."""
from __future__ import annotations

import csv
import io
import json
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .environment import PlanningGraph, build_planning_graph
from .localization import evaluate_trajectories, percent_rigid
from .planner import (
    PlanningError,
    PlanningProblem,
    TrajectorySet,
    plan_all,
    timestep_rigidity,
)
from .rigidity import RigidityCache, sensing_edges
from .rrt import RrtParams, plan_rrt_all
from .scenario import Scenario

ALGORITHMS = ("rcgp", "rrt")
DEFAULT_LOCALIZATION_SEEDS = tuple(range(20))
TIMING_FIELDS = ("planning_time_seconds",)
TABLE_HEADERS = ("Test Case", "Algorithm", "# of AUVs", "Planning Time (s)", "Makespan",
                 "Avg. Localization Error", "Max. Localization Error", "% Rigid")


@dataclass
class MetricsReport:
    scenario: str
    algorithm: str
    num_agents: int
    seed: int
    success: bool
    planning_time_seconds: float | None = None
    makespan: int | None = None
    avg_localization_error: float | None = None
    max_localization_error: float | None = None
    percent_rigid: float | None = None
    localization_seeds: list[int] = field(default_factory=list)
    flagged_timesteps: int = 0
    conflicts: int | None = None
    cache_hit_rate: float | None = None
    error: str | None = None

    def to_dict(self, include_timing: bool = True) -> dict:
        d = asdict(self)
        if not include_timing:
            for k in TIMING_FIELDS:
                d.pop(k, None)
        return d


def build_problem(scenario: Scenario, min_rigidity: float | None = None
                  ) -> tuple[PlanningGraph, PlanningProblem]:
    graph = build_planning_graph(scenario.workspace, scenario.spacing, scenario.connect_radius)
    return graph, scenario.problem(graph, min_rigidity)


def plan_scenario(scenario: Scenario, algorithm: str, seed: int = 0,
                  min_rigidity: float | None = None, cache: RigidityCache | None = None
                  ) -> tuple[TrajectorySet, PlanningProblem, float]:
    """Plan only; returns trajectories, the problem and wall-clock planning time.

    For ``rcgp`` the time includes building the planning graph.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    tic = time.perf_counter()
    graph, problem = build_problem(scenario, min_rigidity)
    if algorithm == "rcgp":
        trajectories = plan_all(problem, cache=cache)
        elapsed = time.perf_counter() - tic
    else:
        params = RrtParams(scenario.rrt.step_size, scenario.rrt.goal_bias,
                           scenario.rrt.max_iterations, seed)
        tic = time.perf_counter()
        trajectories = plan_rrt_all(problem, scenario.workspace, params)
        elapsed = time.perf_counter() - tic
    return trajectories, problem, elapsed


def score(trajectories: TrajectorySet, problem: PlanningProblem, report: MetricsReport,
          localization_seeds: Sequence[int]) -> MetricsReport:
    ev = evaluate_trajectories(trajectories, problem, seeds=localization_seeds)
    report.makespan = trajectories.makespan
    report.avg_localization_error = ev.avg_error
    report.max_localization_error = ev.max_error
    report.percent_rigid = percent_rigid(trajectories, problem)
    report.localization_seeds = list(localization_seeds)
    report.flagged_timesteps = len(ev.flagged)
    return report


def run_plan(scenario: Scenario, algorithm: str = "rcgp", seed: int = 0, out_dir=None,
             localization_seeds: Sequence[int] = DEFAULT_LOCALIZATION_SEEDS,
             min_rigidity: float | None = None, fmt: str = "csv",
             cache: RigidityCache | None = None) -> tuple[TrajectorySet, MetricsReport]:
    """Plan, score, and optionally write the trajectory file and report to ``out_dir``.

    Planning failures propagate as :class:`PlanningError`.
    """
    cache = RigidityCache() if cache is None else cache
    trajectories, problem, elapsed = plan_scenario(scenario, algorithm, seed, min_rigidity, cache)
    report = MetricsReport(scenario.name, algorithm, scenario.num_agents, seed, True, elapsed)
    if trajectories.stats is not None:
        report.conflicts = trajectories.stats.num_conflicts
        report.cache_hit_rate = cache.hit_rate
    score(trajectories, problem, report, localization_seeds)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"{scenario.name}_{algorithm}"
        export_trajectories(trajectories, out / f"{stem}_trajectories.{fmt}", fmt)
        (out / f"{stem}_report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
        emit_plot_data(trajectories, problem, out / f"{stem}_plot", report)
    return trajectories, report


def _stats(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    return {"median": float(statistics.median(vals)), "min": float(min(vals)), "max": float(max(vals))}


@dataclass
class ComparisonRow:
    scenario: str
    algorithm: str
    num_agents: int
    runs: list[MetricsReport]

    @property
    def successes(self) -> list[MetricsReport]:
        return [r for r in self.runs if r.success]

    def metric(self, name: str) -> float | None:
        s = _stats(getattr(r, name) for r in self.successes)
        return None if s is None else s["median"]

    def to_dict(self, include_timing: bool = True) -> dict:
        metrics = ["makespan", "avg_localization_error", "max_localization_error", "percent_rigid"]
        if include_timing:
            metrics = ["planning_time_seconds"] + metrics
        d = {
            "test_case": self.scenario,
            "algorithm": self.algorithm,
            "num_agents": self.num_agents,
            "success": len(self.successes) == len(self.runs),
            "runs": len(self.runs),
            "failures": [r.error for r in self.runs if not r.success],
        }
        for m in metrics:
            d[m] = self.metric(m)
        d["seed_stats"] = {m: _stats(getattr(r, m) for r in self.successes) for m in metrics}
        d["seeds"] = [r.seed for r in self.runs]
        return d


@dataclass
class ComparisonTable:
    rows: list[ComparisonRow]

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps({"rows": [r.to_dict(include_timing) for r in self.rows]},
                          indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        body = []
        for r in self.rows:
            def fmt(name, spec):
                v = r.metric(name)
                return "failed" if v is None else format(v, spec)
            body.append((r.scenario, r.algorithm.upper(), str(r.num_agents),
                         fmt("planning_time_seconds", ".3f"), fmt("makespan", ".1f"),
                         fmt("avg_localization_error", ".3f"), fmt("max_localization_error", ".3f"),
                         fmt("percent_rigid", ".1f")))
        widths = [max(len(h), *(len(b[k]) for b in body)) if body else len(h)
                  for k, h in enumerate(TABLE_HEADERS)]
        lines = [" | ".join(h.ljust(w) for h, w in zip(TABLE_HEADERS, widths)),
                 "-+-".join("-" * w for w in widths)]
        lines += [" | ".join(c.ljust(w) for c, w in zip(b, widths)) for b in body]
        return "\n".join(lines) + "\n"


def _run_one(scenario, algorithm, seed, localization_seeds, min_rigidity) -> MetricsReport:
    try:
        return run_plan(scenario, algorithm, seed, None, localization_seeds, min_rigidity)[1]
    except PlanningError as exc:
        return MetricsReport(scenario.name, algorithm, scenario.num_agents, seed, False,
                             error=f"{type(exc).__name__}: {exc}")


def _compare_one(scenario: Scenario, seeds, localization_seeds, min_rigidity) -> list[ComparisonRow]:
    rcgp = _run_one(scenario, "rcgp", 0, localization_seeds, min_rigidity)
    rrt = [_run_one(scenario, "rrt", s, localization_seeds, min_rigidity) for s in seeds]
    return [ComparisonRow(scenario.name, "rcgp", scenario.num_agents, [rcgp]),
            ComparisonRow(scenario.name, "rrt", scenario.num_agents, rrt)]


def run_compare(scenarios: Scenario | Sequence[Scenario], seeds: Sequence[int] = (0,),
                localization_seeds: Sequence[int] = DEFAULT_LOCALIZATION_SEEDS,
                min_rigidity: float | None = None, jobs: int = 1) -> ComparisonTable:
    """RCGP once (it is deterministic) and RRT once per seed, for every scenario.

    Rows come out ordered by scenario name, RCGP before RRT.
    """
    if isinstance(scenarios, Scenario):
        scenarios = [scenarios]
    seeds = list(seeds)
    if not seeds:
        raise ValueError("at least one seed is required")
    ordered = sorted(scenarios, key=lambda s: s.name)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_compare_one, ordered, [seeds] * len(ordered),
                                  [list(localization_seeds)] * len(ordered),
                                  [min_rigidity] * len(ordered)))
    else:
        parts = [_compare_one(s, seeds, localization_seeds, min_rigidity) for s in ordered]
    return ComparisonTable([row for part in parts for row in part])


def _fmt(x: float) -> str:
    return repr(float(x))


def export_trajectories(trajectories: TrajectorySet, path, fmt: str | None = None) -> Path:
    """Write ``t,agent,x,y`` CSV rows or a ``{"horizon", "agents"}`` JSON object."""
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".") or "csv").lower()
    pos = trajectories.positions
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "agent", "x", "y"])
        for t in range(trajectories.horizon):
            for a in range(trajectories.num_agents):
                w.writerow([t, a, _fmt(pos[a, t, 0]), _fmt(pos[a, t, 1])])
        text = buf.getvalue()
    elif fmt == "json":
        data = {"horizon": trajectories.horizon,
                "agents": [[[float(x), float(y)] for x, y in pos[a]] for a in range(trajectories.num_agents)]}
        text = json.dumps(data) + "\n"
    else:
        raise ValueError(f"unknown trajectory format {fmt!r}")
    path.write_text(text)
    return path


def import_trajectories(path, graph: PlanningGraph | None = None) -> TrajectorySet:
    """Read a file written by :func:`export_trajectories`.

    With ``graph`` given, node ids are recovered when every position lies on a node.
    """
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json" or text.lstrip().startswith("{"):
        data = json.loads(text)
        pos = np.array(data["agents"], dtype=float)
        if pos.shape[1] != data["horizon"]:
            raise ValueError("horizon field disagrees with the agent arrays")
    else:
        rows = list(csv.DictReader(io.StringIO(text)))
        horizon = max(int(r["t"]) for r in rows) + 1
        agents = max(int(r["agent"]) for r in rows) + 1
        pos = np.full((agents, horizon, 2), np.nan)
        for r in rows:
            pos[int(r["agent"]), int(r["t"])] = (float(r["x"]), float(r["y"]))
        if np.isnan(pos).any():
            raise ValueError("trajectory CSV is missing (t, agent) rows")
    nodes = None
    if graph is not None:
        ids = [[graph.node_at(p) for p in agent] for agent in pos]
        if all(k is not None for agent in ids for k in agent):
            nodes = np.array(ids, dtype=int)
    return TrajectorySet(pos, nodes)


def emit_plot_data(trajectories: TrajectorySet, problem: PlanningProblem, out_dir,
                   report: MetricsReport | None = None) -> list[Path]:
    """Plain-text positions, sensing edges and rigidity time series for external plotting."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    positions = ["t agent x y"]
    edges = ["t i j"]
    rigidity = ["t rigidity_eigenvalue rigid"]
    for t in range(trajectories.horizon):
        config = trajectories.at(t)
        for a, (x, y) in enumerate(config):
            positions.append(f"{t} {a} {_fmt(x)} {_fmt(y)}")
        for i, j in sensing_edges(config, problem.sensing_radius):
            edges.append(f"{t} {i} {j}")
        value, rigid = timestep_rigidity(config, problem)
        rigidity.append(f"{t} {'nan' if value is None else _fmt(value)} {int(rigid)}")
    files = []
    for name, lines in (("positions.txt", positions), ("edges.txt", edges), ("rigidity.txt", rigidity)):
        p = out / name
        p.write_text("\n".join(lines) + "\n")
        files.append(p)
    if report is not None:
        p = out / "report.json"
        p.write_text(json.dumps(report.to_dict(include_timing=False), indent=2, sort_keys=True) + "\n")
        files.append(p)
    return files

