"""Prioritized RRT baseline: continuous-space trees, vertex collisions only.

Time along a tree branch equals its depth, so one extension is one timestep.
A later agent may not come within ``step_size / 2`` of an earlier agent at
the same timestep. This planner never looks at network rigidity.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .environment import PlanningGraph, Workspace
from .planner import PlanningError, PlanningProblem, TrajectorySet


class IterationBudgetExceeded(PlanningError):
    pass


@dataclass(frozen=True)
class RrtParams:
    step_size: float = 1.0
    goal_bias: float = 0.1
    max_iterations: int = 20000
    seed: int = 0

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ValueError("goal_bias must lie in [0, 1]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def _prior_at(prior: Sequence[np.ndarray], t: int) -> np.ndarray | None:
    if not prior:
        return None
    return np.array([p[min(t, len(p) - 1)] for p in prior])


def _clear_of(prior, p, t, radius) -> bool:
    others = _prior_at(prior, t)
    if others is None:
        return True
    d = others - p
    return bool(np.all(np.einsum("ij,ij->i", d, d) > radius * radius))


def _parking_clear(prior, p, t_arrive, radius) -> bool:
    """No earlier agent comes near ``p`` from ``t_arrive`` on (including their padding)."""
    if not prior:
        return True
    last = max(len(q) for q in prior)
    return all(_clear_of(prior, p, t, radius) for t in range(t_arrive, max(last, t_arrive + 1)))


def plan_rrt_single(i: int, prior: Sequence[np.ndarray], workspace: Workspace, start, goal,
                    params: RrtParams, rng: np.random.Generator | None = None) -> np.ndarray:
    """Grow one tree from ``start`` until it connects to ``goal``.

    Returns positions indexed by timestep, shape ``(T, 2)``.
    """
    if rng is None:
        rng = np.random.default_rng([int(params.seed), int(i)])
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    step = params.step_size
    sep = 0.5 * step
    x0, y0, x1, y1 = workspace.bounds

    cap = params.max_iterations + 1
    pts = np.empty((cap, 2))
    parent = np.empty(cap, dtype=int)
    depth = np.empty(cap, dtype=int)
    pts[0], parent[0], depth[0] = start, -1, 0
    size = 1

    def path_to(k, append_goal):
        out = []
        while k >= 0:
            out.append(pts[k])
            k = parent[k]
        out.reverse()
        if append_goal:
            out.append(goal)
        return np.array(out)

    def try_finish(k):
        d = float(np.hypot(*(goal - pts[k])))
        if d == 0.0:
            return path_to(k, False) if _parking_clear(prior, goal, depth[k], sep) else None
        if d > step or not workspace.segment_free(tuple(pts[k]), tuple(goal)):
            return None
        if not _parking_clear(prior, goal, depth[k] + 1, sep):
            return None
        return path_to(k, True)

    done = try_finish(0)
    if done is not None:
        return done
    for _ in range(params.max_iterations):
        if rng.random() < params.goal_bias:
            sample = goal
        else:
            sample = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])
        d = pts[:size] - sample
        near = int(np.argmin(np.einsum("ij,ij->i", d, d)))
        direction = sample - pts[near]
        dist = float(np.hypot(*direction))
        if dist == 0.0:
            continue
        new = pts[near] + direction * (min(step, dist) / dist)
        t = depth[near] + 1
        if not workspace.point_free(tuple(new)) or not workspace.segment_free(tuple(pts[near]), tuple(new)):
            continue
        if not _clear_of(prior, new, t, sep):
            continue
        pts[size], parent[size], depth[size] = new, near, t
        size += 1
        done = try_finish(size - 1)
        if done is not None:
            return done
    raise IterationBudgetExceeded(f"agent rank {i}: no path after {params.max_iterations} iterations")


def plan_rrt_all(problem: PlanningProblem, workspace: Workspace, params: RrtParams) -> TrajectorySet:
    """Plan every agent in priority order against the already planned ones."""
    graph: PlanningGraph = problem.graph
    paths: list[np.ndarray] = []
    for rank in range(problem.num_agents):
        start = graph.nodes[problem.start_of(rank)]
        goal = graph.nodes[problem.goal_of(rank)]
        paths.append(plan_rrt_single(rank, paths, workspace, start, goal, params))
    by_agent = [None] * problem.num_agents
    for rank, agent in enumerate(problem.priority_order):
        by_agent[agent] = paths[rank]
    return TrajectorySet.from_position_paths(by_agent)
