import ast
import inspect

import numpy as np
import pytest

import rigidplan.rrt as rrt_module
from rigidplan.environment import Workspace
from rigidplan.experiment import build_problem
from rigidplan.rrt import IterationBudgetExceeded, RrtParams, plan_rrt_all, plan_rrt_single
from rigidplan.scenario import bundled_scenario

OPEN = Workspace((0, 0, 10, 10))
BOX = ((4, 4), (6, 4), (6, 6), (4, 6))


def test_goal_biased_single_step():
    path = plan_rrt_single(0, [], OPEN, (0, 0), (0, 1), RrtParams(goal_bias=1.0))
    np.testing.assert_array_equal(path, [[0, 0], [0, 1]])


def test_start_is_goal():
    path = plan_rrt_single(0, [], OPEN, (3, 3), (3, 3), RrtParams())
    assert path.shape == (1, 2)


def test_enclosed_goal_exhausts_budget():
    ring = Workspace((0, 0, 10, 10), (((4, 4), (6, 4), (6, 4.5), (4, 4.5)),
                                      ((4, 5.5), (6, 5.5), (6, 6), (4, 6)),
                                      ((4, 4), (4.5, 4), (4.5, 6), (4, 6)),
                                      ((5.5, 4), (6, 4), (6, 6), (5.5, 6))))
    with pytest.raises(IterationBudgetExceeded):
        plan_rrt_single(0, [], ring, (0, 0), (5, 5), RrtParams(max_iterations=300))


@pytest.mark.parametrize("bad", [dict(step_size=0), dict(goal_bias=1.5), dict(max_iterations=0),
                                 dict(seed=-1)])
def test_params_validated(bad):
    with pytest.raises(ValueError):
        RrtParams(**bad)


def test_path_is_obstacle_free_and_stepwise():
    ws = Workspace((0, 0, 10, 10), (BOX,))
    path = plan_rrt_single(0, [], ws, (1, 1), (9, 9), RrtParams(seed=3))
    steps = np.linalg.norm(np.diff(path, axis=0), axis=1)
    assert np.all(steps <= 1.0 + 1e-9)
    for a, b in zip(path[:-1], path[1:]):
        assert ws.segment_free(tuple(a), tuple(b))
    np.testing.assert_array_equal(path[-1], (9, 9))


def test_deterministic_and_seed_sensitive():
    a = plan_rrt_single(0, [], OPEN, (0, 0), (9, 9), RrtParams(seed=5))
    b = plan_rrt_single(0, [], OPEN, (0, 0), (9, 9), RrtParams(seed=5))
    c = plan_rrt_single(0, [], OPEN, (0, 0), (9, 9), RrtParams(seed=6))
    np.testing.assert_array_equal(a, b)
    assert a.shape != c.shape or not np.array_equal(a, c)


def test_collision_proxy_against_prior():
    prior = [plan_rrt_single(0, [], OPEN, (0, 5), (9, 5), RrtParams(seed=1))]
    path = plan_rrt_single(1, prior, OPEN, (9, 4), (0, 4), RrtParams(seed=2))
    for t, p in enumerate(path):
        other = prior[0][min(t, len(prior[0]) - 1)]
        assert np.linalg.norm(p - other) > 0.5


def test_plan_all_on_bundled_scenario():
    scenario = bundled_scenario("sparse_6")
    _, problem = build_problem(scenario)
    ts = plan_rrt_all(problem, scenario.workspace, RrtParams(seed=0))
    assert ts.num_agents == 6 and ts.nodes is None
    assert ts.horizon == max(ts.lengths)
    for a in range(6):
        np.testing.assert_array_equal(ts.positions[a, 0], problem.graph.nodes[problem.starts[a]])
        np.testing.assert_array_equal(ts.positions[a, -1], problem.graph.nodes[problem.goals[a]])
    again = plan_rrt_all(problem, scenario.workspace, RrtParams(seed=0))
    np.testing.assert_array_equal(ts.positions, again.positions)


def test_baseline_never_imports_rigidity():
    tree = ast.parse(inspect.getsource(rrt_module))
    imported = {node.module for node in ast.walk(tree) if isinstance(node, ast.ImportFrom)}
    assert not any(m and m.endswith("rigidity") for m in imported)
