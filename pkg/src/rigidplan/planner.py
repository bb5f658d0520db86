"""Rigidity-constrained prioritized planning on a shared graph.

Agents plan one at a time in priority order. For each agent a table of
per-timestep node sets is built from the trajectories of the agents already
planned:

* ``P[t]`` reachable: the previous valid set plus its graph neighbours,
  minus conflict states and nodes occupied by earlier agents;
* ``C[t]`` connected: nodes within sensing range of enough earlier agents;
* ``R[t]`` rigid: connected candidates that keep agents ``0..i`` above the
  minimum rigidity;
* ``V[t]`` valid: ``P`` for the first agent, ``P & C`` for the second and
  ``P & R`` afterwards.

The agent then runs a time-expanded A* restricted to ``V``. An empty valid set
blames the previous agent's state at that time (a conflict), which is
replanned while avoiding it; a failed agent hands control back to its
predecessor.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .environment import PlanningGraph
from .rigidity import (
    NoiseModel,
    RigidityCache,
    check_grid_cells,
    network_rigidity,
)

logger = logging.getLogger(__name__)

DEFAULT_MIN_RIGIDITY = 0.1
DEFAULT_MAX_REPLANS = 50


class PlanningError(RuntimeError):
    pass


class HorizonExceeded(PlanningError):
    """The goal never became valid before the horizon cap.

    ``bottleneck_time`` is the earliest timestep (>= 1) with the smallest
    valid set; the planner blames the predecessor's state there.
    """

    def __init__(self, message, agent=None, bottleneck_time=None):
        super().__init__(message)
        self.agent = agent
        self.bottleneck_time = bottleneck_time


class NoPath(PlanningError):
    pass


class PlanningFailed(PlanningError):
    def __init__(self, message, agent=None, stats=None):
        super().__init__(message)
        self.agent = agent
        self.stats = stats


@dataclass(frozen=True)
class Conflict:
    """A state ``(node, time)`` that agent ``agent`` (planning rank) must avoid."""

    agent: int
    node: int
    time: int

    def __post_init__(self):
        if self.time < 1:
            raise ValueError("conflicts cannot be placed at t = 0")


@dataclass
class PlanningProblem:
    graph: PlanningGraph
    starts: Sequence[int]
    goals: Sequence[int]
    sensing_radius: float
    noise: NoiseModel = NoiseModel()
    min_rigidity: float = DEFAULT_MIN_RIGIDITY
    priority_order: Sequence[int] | None = None
    horizon_cap: int | None = None
    check_start: bool = True

    def __post_init__(self):
        n = len(self.starts)
        self.starts = tuple(int(s) for s in self.starts)
        self.goals = tuple(int(g) for g in self.goals)
        if len(self.goals) != n:
            raise ValueError("starts and goals differ in length")
        if n == 0:
            raise ValueError("problem has no agents")
        for name, ids in (("starts", self.starts), ("goals", self.goals)):
            if len(set(ids)) != n:
                raise ValueError(f"{name} are not pairwise distinct")
            if any(not 0 <= k < len(self.graph) for k in ids):
                raise ValueError(f"{name} contain an invalid node id")
        if self.sensing_radius <= 0:
            raise ValueError("sensing radius must be positive")
        if self.min_rigidity < 0:
            raise ValueError("min_rigidity must be non-negative")
        order = tuple(range(n)) if self.priority_order is None else tuple(int(k) for k in self.priority_order)
        if sorted(order) != list(range(n)):
            raise ValueError("priority_order is not a permutation of the agents")
        self.priority_order = order
        if self.horizon_cap is None:
            self.horizon_cap = 10 * max(1, self.graph.diameter())
        if self.check_start and n >= 3 and self.min_rigidity > 0:
            verdict = self.rigidity_at(self.starts)
            if not verdict.is_rigid:
                raise ValueError(
                    f"start configuration has rigidity {verdict.rigidity_eigenvalue:.4g} "
                    f"below the minimum {self.min_rigidity}")

    @property
    def num_agents(self) -> int:
        return len(self.starts)

    def start_of(self, rank: int) -> int:
        return self.starts[self.priority_order[rank]]

    def goal_of(self, rank: int) -> int:
        return self.goals[self.priority_order[rank]]

    def rigidity_at(self, node_ids, cache: RigidityCache | None = None):
        cells = self.graph.cells
        return check_grid_cells([cells[k] for k in node_ids], self.graph.spacing,
                                self.sensing_radius, self.noise, self.min_rigidity, cache)


@dataclass
class ValidSetTable:
    agent: int
    P: list[frozenset]
    C: list[frozenset | None]
    R: list[frozenset | None]
    V: list[frozenset]
    final_time: int
    goal: int

    def valid(self, node: int, t: int) -> bool:
        return 0 <= t <= self.final_time and node in self.V[t]


@dataclass
class PlanningStats:
    conflicts: list[Conflict] = field(default_factory=list)
    failures: list[int] = field(default_factory=list)
    attempts: dict[int, int] = field(default_factory=dict)
    rigidity_checks: int = 0

    @property
    def num_conflicts(self) -> int:
        return len(self.conflicts)


@dataclass
class TrajectorySet:
    """Per-agent trajectories padded to a common horizon.

    ``positions`` has shape ``(agents, horizon, 2)``; ``nodes`` holds the
    matching planning-graph ids when the plan lives on the graph.
    ``lengths`` are the unpadded trajectory lengths.
    """

    positions: np.ndarray
    nodes: np.ndarray | None = None
    lengths: tuple[int, ...] | None = None
    stats: PlanningStats | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        if self.nodes is not None:
            self.nodes = np.asarray(self.nodes, dtype=int)
        if self.lengths is None:
            self.lengths = (self.horizon,) * self.num_agents

    @property
    def num_agents(self) -> int:
        return self.positions.shape[0]

    @property
    def horizon(self) -> int:
        return self.positions.shape[1]

    @property
    def makespan(self) -> int:
        return self.horizon - 1

    def at(self, t: int) -> np.ndarray:
        return self.positions[:, t, :]

    @classmethod
    def from_node_paths(cls, graph: PlanningGraph, paths: Sequence[Sequence[int]],
                        stats: PlanningStats | None = None) -> "TrajectorySet":
        horizon = max(len(p) for p in paths)
        nodes = np.array([pad(p, horizon) for p in paths], dtype=int)
        return cls(graph.nodes[nodes], nodes, tuple(len(p) for p in paths), stats)

    @classmethod
    def from_position_paths(cls, paths: Sequence[np.ndarray]) -> "TrajectorySet":
        horizon = max(len(p) for p in paths)
        padded = []
        for p in paths:
            p = np.asarray(p, dtype=float)
            tail = np.repeat(p[-1:], horizon - len(p), axis=0)
            padded.append(np.vstack([p, tail]))
        return cls(np.stack(padded), None, tuple(len(p) for p in paths))


def pad(path: Sequence[int], horizon: int) -> list[int]:
    return list(path) + [path[-1]] * (horizon - len(path))


def node_at(path: Sequence[int], t: int) -> int:
    """Position of an agent that waits at its goal once its path ends."""
    return path[t] if t < len(path) else path[-1]


class _Disks:
    """Lazily memoized node-id sets within sensing range of each graph node."""

    def __init__(self, graph: PlanningGraph, radius: float):
        self.graph = graph
        self.radius = radius
        self._memo: dict[int, tuple[int, ...]] = {}

    def __call__(self, node: int) -> tuple[int, ...]:
        found = self._memo.get(node)
        if found is None:
            found = tuple(self.graph.nodes_within(self.graph.nodes[node], self.radius))
            self._memo[node] = found
        return found


def _disks(problem: PlanningProblem) -> _Disks:
    d = getattr(problem, "_disk_memo", None)
    if d is None or d.graph is not problem.graph or d.radius != problem.sensing_radius:
        d = _Disks(problem.graph, problem.sensing_radius)
        problem._disk_memo = d
    return d


def connected_states(t: int, prior_positions: Sequence[int], problem: PlanningProblem,
                     agent: int | None = None) -> frozenset:
    """Nodes in sensing range of at least ``min(2, agent)`` earlier agents at time ``t``.

    ``agent`` defaults to ``len(prior_positions)``; nodes occupied by earlier
    agents are excluded.
    """
    if not prior_positions:
        raise ValueError("connected_states needs at least one earlier agent")
    agent = len(prior_positions) if agent is None else agent
    need = min(2, agent)
    disks = _disks(problem)
    counts: dict[int, int] = defaultdict(int)
    for node in prior_positions:
        for k in disks(node):
            counts[k] += 1
    occupied = set(prior_positions)
    return frozenset(k for k, c in counts.items() if c >= need and k not in occupied)


def rigid_states(t: int, candidates, prior_positions: Sequence[int], problem: PlanningProblem,
                 cache: RigidityCache | None = None, stats: PlanningStats | None = None) -> frozenset:
    """Candidates that keep the earlier agents plus the candidate above the minimum rigidity."""
    prior = list(prior_positions)
    rigid = []
    for c in sorted(candidates):
        if stats is not None:
            stats.rigidity_checks += 1
        if problem.rigidity_at(prior + [c], cache).is_rigid:
            rigid.append(c)
    return frozenset(rigid)


def construct_valid_sets(i: int, prior: Sequence[Sequence[int]], conflicts, problem: PlanningProblem,
                         cache: RigidityCache | None = None,
                         stats: PlanningStats | None = None) -> ValidSetTable | Conflict:
    """Build the reachable/connected/rigid/valid sets of the agent with rank ``i``.

    ``prior`` holds the node paths of ranks ``0..i-1``; agents are treated as
    parked at their last node once their path ends. ``conflicts`` is a
    collection of ``(node, time)`` states this agent may not occupy.

    Construction stops at the first ``t`` where the goal is valid and every
    earlier agent has finished (and every conflict time has passed), so the
    goal can be held for the rest of the common horizon. Returns a
    :class:`Conflict` against rank ``i - 1`` if a valid set comes out empty.
    """
    graph = problem.graph
    start, goal = problem.start_of(i), problem.goal_of(i)
    banned: dict[int, set[int]] = defaultdict(set)
    for node, time in conflicts:
        banned[time].add(node)
    prior_horizon = max((len(p) for p in prior), default=1)
    settle = max([prior_horizon - 1] + list(banned))

    P = [frozenset([start])]
    V = [frozenset([start])]
    C: list[frozenset | None] = [None]
    R: list[frozenset | None] = [None]
    t = 0
    while not (goal in V[t] and t >= settle):
        if t >= problem.horizon_cap:
            sizes = [len(v) for v in V[1:]] or [0]
            raise HorizonExceeded(
                f"agent rank {i}: goal not valid within {problem.horizon_cap} steps",
                agent=i, bottleneck_time=1 + int(np.argmin(sizes)))
        nxt = t + 1
        prior_now = [node_at(p, nxt) for p in prior]
        reach = set(V[t])
        for v in V[t]:
            reach.update(graph.neighbors(v))
        reach -= banned.get(nxt, set())
        reach.difference_update(prior_now)
        P_next = frozenset(reach)
        if i == 0:
            C_next = R_next = None
            V_next = P_next
        elif i == 1:
            C_next = connected_states(nxt, prior_now, problem, i)
            R_next = None
            V_next = P_next & C_next
        else:
            C_next = connected_states(nxt, prior_now, problem, i)
            R_next = rigid_states(nxt, P_next & C_next, prior_now, problem, cache, stats)
            V_next = P_next & R_next
        if not V_next:
            if i == 0:
                raise NoPath(f"agent rank 0 has no valid state at t={nxt}")
            return Conflict(agent=i - 1, node=node_at(prior[i - 1], nxt), time=nxt)
        if nxt > settle and V_next == V[t] and goal not in V_next:
            # earlier agents are parked and no conflicts remain: the sets are at a fixpoint
            raise HorizonExceeded(
                f"agent rank {i}: valid sets stopped growing before reaching the goal",
                agent=i, bottleneck_time=1 + int(np.argmin([len(v) for v in V[1:] + [V_next]])))
        P.append(P_next)
        C.append(C_next)
        R.append(R_next)
        V.append(V_next)
        t = nxt
    return ValidSetTable(agent=i, P=P, C=C, R=R, V=V, final_time=t, goal=goal)


def _goal_hold_time(table: ValidSetTable) -> int:
    """Earliest ``t`` from which the goal stays valid through ``final_time``."""
    t = table.final_time
    while t > 0 and table.goal in table.V[t - 1]:
        t -= 1
    return t


def plan_single(i: int, table: ValidSetTable, problem: PlanningProblem) -> list[int]:
    """Time-expanded A* over ``(node, t)`` states restricted to the valid sets.

    Each step either waits or follows one graph edge at unit cost. The
    heuristic is straight-line distance to the goal divided by the connection
    radius, which bounds the distance covered per step. Ties prefer the
    smaller heuristic, then the smaller node id, then the earlier insertion.
    The returned path ends at the first arrival after which the goal stays
    valid.
    """
    graph = problem.graph
    start, goal = problem.start_of(i), problem.goal_of(i)
    if table.V[0] != frozenset([start]):
        raise ValueError("table was not built for this agent")
    hold = _goal_hold_time(table)
    goal_pos = graph.nodes[goal]
    inv_r = 1.0 / graph.connect_radius

    def h(node):
        d = graph.nodes[node] - goal_pos
        return math.hypot(d[0], d[1]) * inv_r

    counter = itertools.count()
    h0 = h(start)
    heap = [(h0, h0, start, next(counter), 0)]
    parent: dict[tuple[int, int], tuple[int, int] | None] = {(start, 0): None}
    closed = set()
    while heap:
        _, _, node, _, t = heapq.heappop(heap)
        state = (node, t)
        if state in closed:
            continue
        closed.add(state)
        if node == goal and t >= hold:
            path = []
            cur = state
            while cur is not None:
                path.append(cur[0])
                cur = parent[cur]
            return path[::-1]
        if t >= table.final_time:
            continue
        nxt = t + 1
        valid_next = table.V[nxt]
        for v in (node,) + graph.neighbors(node):
            s = (v, nxt)
            if v not in valid_next or s in parent:
                continue
            parent[s] = state
            hv = h(v)
            heapq.heappush(heap, (nxt + hv, hv, v, next(counter), nxt))
    raise NoPath(f"agent rank {i}: goal unreachable within the valid sets")


def _blame_from_failure(exc: PlanningError, rank: int, trajs) -> tuple[int, int] | None:
    t = getattr(exc, "bottleneck_time", None)
    if rank == 0 or t is None or t < 1:
        return None
    return (node_at(trajs[rank - 1], t), t)


def plan_all(problem: PlanningProblem, cache: RigidityCache | None = None,
             max_replans: int = DEFAULT_MAX_REPLANS) -> TrajectorySet:
    """Plan every agent in priority order with conflict recording and backtracking.

    Raises :class:`PlanningFailed` when backtracking runs out (below the first
    agent, or more than ``max_replans`` attempts for one agent) or when the
    assembled plan fails full-network validation.
    """
    if cache is None:
        cache = RigidityCache()
    n = problem.num_agents
    stats = PlanningStats()
    trajs: list[list[int] | None] = [None] * n
    conflicts: list[set[tuple[int, int]]] = [set() for _ in range(n)]
    i = 0
    while i < n:
        stats.attempts[i] = stats.attempts.get(i, 0) + 1
        if stats.attempts[i] > max_replans:
            raise PlanningFailed(
                f"agent rank {i} exceeded {max_replans} planning attempts "
                f"({stats.num_conflicts} conflicts recorded)", agent=i, stats=stats)
        prior = trajs[:i]
        try:
            table = construct_valid_sets(i, prior, conflicts[i], problem, cache, stats)
            if isinstance(table, Conflict):
                logger.debug("conflict %s", table)
                stats.conflicts.append(table)
                conflicts[i - 1].add((table.node, table.time))
                i -= 1
                continue
            path = plan_single(i, table, problem)
        except (HorizonExceeded, NoPath) as exc:
            logger.debug("planning failed for rank %d: %s", i, exc)
            stats.failures.append(i)
            blame = _blame_from_failure(exc, i, trajs)
            if blame is not None and blame not in conflicts[i - 1]:
                stats.conflicts.append(Conflict(i - 1, *blame))
                conflicts[i - 1].add(blame)
            i -= 1
            if i < 0:
                raise PlanningFailed(f"planning failed for the first agent: {exc}",
                                     agent=0, stats=stats) from exc
            continue
        trajs[i] = path
        i += 1
        if i < n:
            conflicts[i].clear()

    by_agent = [None] * n
    for rank, agent in enumerate(problem.priority_order):
        by_agent[agent] = trajs[rank]
    result = TrajectorySet.from_node_paths(problem.graph, by_agent, stats)
    report = validate_solution(result, problem)
    if not report.passed:
        raise PlanningFailed(f"assembled plan failed validation: {report.summary()}",
                             stats=stats)
    return result


@dataclass
class TimestepReport:
    t: int
    collisions: list[tuple[int, int]]
    invalid_moves: list[int]
    rigidity_eigenvalue: float | None
    rigid: bool


@dataclass
class ValidationReport:
    steps: list[TimestepReport]
    endpoint_errors: list[str]
    min_rigidity: float

    @property
    def num_collisions(self) -> int:
        return sum(len(s.collisions) for s in self.steps)

    @property
    def num_invalid_moves(self) -> int:
        return sum(len(s.invalid_moves) for s in self.steps)

    @property
    def num_nonrigid(self) -> int:
        return sum(not s.rigid for s in self.steps)

    @property
    def percent_rigid(self) -> float:
        return 100.0 * (len(self.steps) - self.num_nonrigid) / len(self.steps)

    @property
    def passed(self) -> bool:
        return (not self.endpoint_errors and self.num_collisions == 0
                and self.num_invalid_moves == 0 and self.num_nonrigid == 0)

    def summary(self) -> str:
        return (f"{self.num_collisions} collisions, {self.num_invalid_moves} invalid moves, "
                f"{self.num_nonrigid}/{len(self.steps)} non-rigid timesteps, "
                f"{len(self.endpoint_errors)} endpoint errors")


def timestep_rigidity(config: np.ndarray, problem: PlanningProblem) -> tuple[float | None, bool]:
    """Full-network rigidity at one timestep; networks under 3 agents count as rigid
    only when no minimum is imposed."""
    if len(config) < 3:
        return None, problem.min_rigidity == 0
    verdict = network_rigidity(config, problem.sensing_radius, problem.noise, problem.min_rigidity)
    return verdict.rigidity_eigenvalue, verdict.is_rigid


def validate_solution(trajectories: TrajectorySet, problem: PlanningProblem,
                      min_rigidity: float | None = None) -> ValidationReport:
    """Check collisions, moves, endpoints and full-network rigidity at every timestep.

    Moves are only checked when node ids are available; continuous
    trajectories are compared by position.
    """
    threshold = problem.min_rigidity if min_rigidity is None else min_rigidity
    if threshold != problem.min_rigidity:
        problem = _with_threshold(problem, threshold)
    graph = problem.graph
    nodes = trajectories.nodes
    pos = trajectories.positions
    errors = []
    if trajectories.num_agents != problem.num_agents:
        errors.append(f"expected {problem.num_agents} agents, got {trajectories.num_agents}")
    else:
        for a in range(problem.num_agents):
            for label, t, want in (("start", 0, problem.starts[a]), ("goal", -1, problem.goals[a])):
                if not np.allclose(pos[a, t], graph.nodes[want], atol=1e-9):
                    errors.append(f"agent {a} {label} is {tuple(pos[a, t])}, expected "
                                  f"{tuple(graph.nodes[want])}")
    steps = []
    for t in range(trajectories.horizon):
        collisions = []
        config = pos[:, t, :]
        for a in range(len(config)):
            for b in range(a + 1, len(config)):
                if nodes is not None:
                    same = nodes[a, t] == nodes[b, t]
                else:
                    same = np.allclose(config[a], config[b], atol=1e-9)
                if same:
                    collisions.append((a, b))
        invalid = []
        if nodes is not None and t > 0:
            for a in range(len(config)):
                u, v = nodes[a, t - 1], nodes[a, t]
                if u != v and v not in graph.neighbors(u):
                    invalid.append(a)
        value, rigid = timestep_rigidity(config, problem)
        steps.append(TimestepReport(t, collisions, invalid, value, rigid))
    return ValidationReport(steps, errors, threshold)


def _with_threshold(problem: PlanningProblem, threshold: float) -> PlanningProblem:
    return PlanningProblem(problem.graph, problem.starts, problem.goals, problem.sensing_radius,
                           problem.noise, threshold, problem.priority_order, problem.horizon_cap,
                           check_start=False)
