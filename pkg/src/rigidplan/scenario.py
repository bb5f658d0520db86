"""Scenario files: JSON description of a workspace, agents and planner settings.

Schema (lengths in workspace units)::

    {
      "name": "corridor_6",
      "workspace": {"bounds": [x_min, y_min, x_max, y_max],
                    "obstacles": [[[x, y], ...], ...]},
      "spacing": 1.0,                 # grid interval, default 1
      "connect_radius": 2.0,          # planning-graph edge length, default 2
      "sensing_radius": 3.0,          # required
      "noise": {"kind": "additive", "sigma": 0.1},
      "min_rigidity": 0.1,            # default 0.1
      "agents": [{"start": [x, y], "goal": [x, y]}, ...],
      "priority_order": null,         # optional permutation of agent indices
      "horizon_cap": null,            # optional step limit
      "rrt": {"step_size": 1.0, "goal_bias": 0.1, "max_iterations": 20000}
    }
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .environment import PlanningGraph, Workspace
from .planner import DEFAULT_MIN_RIGIDITY, PlanningFailed, PlanningProblem
from .rigidity import NoiseKind, NoiseModel
from .rrt import RrtParams

DEFAULT_SIGMA = 0.1


class ScenarioError(ValueError):
    pass


class ParseError(ScenarioError):
    pass


class ValidationError(ScenarioError):
    pass


@dataclass
class Scenario:
    name: str
    workspace: Workspace
    sensing_radius: float
    agents: list[tuple[tuple[float, float], tuple[float, float]]]
    spacing: float = 1.0
    connect_radius: float = 2.0
    noise: NoiseModel = field(default_factory=lambda: NoiseModel(NoiseKind.ADDITIVE, DEFAULT_SIGMA))
    min_rigidity: float = DEFAULT_MIN_RIGIDITY
    priority_order: list[int] | None = None
    horizon_cap: int | None = None
    rrt: RrtParams | None = None

    def __post_init__(self):
        if self.rrt is None:
            self.rrt = RrtParams(step_size=self.spacing)

    @property
    def num_agents(self) -> int:
        return len(self.agents)

    @property
    def starts(self):
        return [a[0] for a in self.agents]

    @property
    def goals(self):
        return [a[1] for a in self.agents]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "workspace": {
                "bounds": list(self.workspace.bounds),
                "obstacles": [[list(v) for v in poly] for poly in self.workspace.obstacles],
            },
            "spacing": self.spacing,
            "connect_radius": self.connect_radius,
            "sensing_radius": self.sensing_radius,
            "noise": {"kind": self.noise.kind.value, "sigma": self.noise.sigma},
            "min_rigidity": self.min_rigidity,
            "agents": [{"start": list(s), "goal": list(g)} for s, g in self.agents],
            "priority_order": self.priority_order,
            "horizon_cap": self.horizon_cap,
            "rrt": {"step_size": self.rrt.step_size, "goal_bias": self.rrt.goal_bias,
                    "max_iterations": self.rrt.max_iterations},
        }

    def problem(self, graph: PlanningGraph, min_rigidity: float | None = None) -> PlanningProblem:
        """Planning problem on ``graph``.

        A start or goal that is on the grid but blocked by an obstacle makes
        the scenario infeasible and raises :class:`PlanningFailed`.
        """
        starts, goals = [], []
        for k, (s, g) in enumerate(self.agents):
            for label, p, out in (("start", s, starts), ("goal", g, goals)):
                node = graph.node_at(p)
                if node is None:
                    raise PlanningFailed(f"agent {k} {label} {p} lies inside an obstacle "
                                         f"and has no planning-graph node", agent=k)
                out.append(node)
        try:
            return PlanningProblem(
                graph, starts, goals, self.sensing_radius, self.noise,
                self.min_rigidity if min_rigidity is None else min_rigidity,
                self.priority_order, self.horizon_cap)
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ParseError(f"{where}: missing field '{key}'")
    return d[key]


def _point(value, where):
    if not (isinstance(value, (list, tuple)) and len(value) == 2
            and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)):
        raise ParseError(f"{where}: expected [x, y], got {value!r}")
    return (float(value[0]), float(value[1]))


def _number(d: dict, key: str, default, where: str):
    value = d.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"{where}.{key}: expected a number, got {value!r}")
    return value


def _on_grid(p, origin, spacing) -> bool:
    for c, o in zip(p, origin):
        k = (c - o) / spacing
        if abs(k - round(k)) * spacing > 1e-9:
            return False
    return True


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ParseError("scenario root must be a JSON object")
    name = str(data.get("name", "scenario"))
    ws_data = _require(data, "workspace", "scenario")
    bounds = _require(ws_data, "bounds", "workspace")
    if not (isinstance(bounds, list) and len(bounds) == 4):
        raise ParseError("workspace.bounds: expected [x_min, y_min, x_max, y_max]")
    obstacles = []
    for k, poly in enumerate(ws_data.get("obstacles", [])):
        if not isinstance(poly, list):
            raise ParseError(f"workspace.obstacles[{k}]: expected a list of vertices")
        obstacles.append(tuple(_point(v, f"workspace.obstacles[{k}]") for v in poly))
    try:
        workspace = Workspace(tuple(float(b) for b in bounds), tuple(obstacles))
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"workspace: {exc}") from exc

    spacing = float(_number(data, "spacing", 1.0, "scenario"))
    connect_radius = float(_number(data, "connect_radius", 2.0, "scenario"))
    _require(data, "sensing_radius", "scenario")
    sensing_radius = float(_number(data, "sensing_radius", None, "scenario"))
    min_rigidity = float(_number(data, "min_rigidity", DEFAULT_MIN_RIGIDITY, "scenario"))
    noise_data = data.get("noise", {})
    try:
        noise = NoiseModel(NoiseKind(str(noise_data.get("kind", "additive")).lower()),
                           float(noise_data.get("sigma", DEFAULT_SIGMA)))
    except (ValueError, TypeError) as exc:
        raise ValidationError(f"noise: {exc}") from exc

    agents = []
    for k, a in enumerate(_require(data, "agents", "scenario")):
        where = f"agents[{k}]"
        if not isinstance(a, dict):
            raise ParseError(f"{where}: expected an object with start and goal")
        agents.append((_point(_require(a, "start", where), f"{where}.start"),
                       _point(_require(a, "goal", where), f"{where}.goal")))

    rrt_data = data.get("rrt", {}) or {}
    try:
        rrt = RrtParams(step_size=float(rrt_data.get("step_size", spacing)),
                        goal_bias=float(rrt_data.get("goal_bias", 0.1)),
                        max_iterations=int(rrt_data.get("max_iterations", 20000)))
    except (ValueError, TypeError) as exc:
        raise ValidationError(f"rrt: {exc}") from exc

    priority = data.get("priority_order")
    horizon = data.get("horizon_cap")
    scenario = Scenario(
        name=name, workspace=workspace, sensing_radius=sensing_radius, agents=agents,
        spacing=spacing, connect_radius=connect_radius, noise=noise, min_rigidity=min_rigidity,
        priority_order=None if priority is None else [int(v) for v in priority],
        horizon_cap=None if horizon is None else int(horizon), rrt=rrt)
    validate_scenario(scenario)
    return scenario


def validate_scenario(s: Scenario) -> None:
    if s.spacing <= 0 or s.connect_radius <= 0 or s.sensing_radius <= 0:
        raise ValidationError("spacing, connect_radius and sensing_radius must be positive")
    if s.min_rigidity < 0:
        raise ValidationError("min_rigidity must be non-negative")
    if not s.agents:
        raise ValidationError("scenario has no agents")
    if s.min_rigidity > 0 and len(s.agents) < 3:
        raise ValidationError("at least 3 agents are needed when min_rigidity > 0")
    origin = s.workspace.bounds[:2]
    for k, (start, goal) in enumerate(s.agents):
        for label, p in (("start", start), ("goal", goal)):
            if not _on_grid(p, origin, s.spacing):
                raise ValidationError(f"agents[{k}].{label} {p} is not on the sampling grid")
            if not s.workspace.in_bounds(p):
                raise ValidationError(f"agents[{k}].{label} {p} is outside the workspace bounds")
    for label, pts in (("starts", s.starts), ("goals", s.goals)):
        if len(set(pts)) != len(pts):
            raise ValidationError(f"{label} are not pairwise distinct")
    if s.priority_order is not None and sorted(s.priority_order) != list(range(len(s.agents))):
        raise ValidationError("priority_order is not a permutation of the agents")


def load_scenario(path) -> Scenario:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return scenario_from_dict(data)


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario.to_dict(), indent=2) + "\n")


def bundled_scenario_paths() -> list[Path]:
    root = resources.files("rigidplan") / "scenarios"
    return sorted(Path(str(p)) for p in root.iterdir() if p.name.endswith(".json"))


def bundled_scenario(name: str) -> Scenario:
    for p in bundled_scenario_paths():
        if p.stem == name or p.name == name:
            return load_scenario(p)
    raise KeyError(f"no bundled scenario named {name!r}")
