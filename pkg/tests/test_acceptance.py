"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

The lines are printed in the pytest terminal summary (see conftest.py).
"""
import json
import math
import time
from collections import deque

import numpy as np
import pytest

from rigidplan.cli import main
from rigidplan.environment import Workspace, build_planning_graph
from rigidplan.experiment import build_problem, run_compare
from rigidplan.localization import RangeSample, localize
from rigidplan.planner import (
    HorizonExceeded,
    PlanningError,
    PlanningProblem,
    construct_valid_sets,
    plan_all,
    plan_single,
    validate_solution,
)
from rigidplan.rigidity import (
    MeasurementGraph,
    NoiseModel,
    RigidityCache,
    build_fim,
    eigenvalues_symmetric,
    rigidity_eigenvalue,
    sensing_edges,
)
from rigidplan.scenario import bundled_scenario, bundled_scenario_paths, load_scenario

from .oracles import bfs_earliest_arrival, jacobi_eigenvalues

RESULTS: dict[int, tuple[bool, str, str]] = {}
ADDITIVE = NoiseModel("additive", 1.0)


def record(number, title, ok, detail):
    RESULTS[number] = (bool(ok), title, detail)
    assert ok, f"criterion {number} ({title}) failed: {detail}"


def connected(n, edges):
    adj = {k: set() for k in range(n)}
    for i, j in edges:
        adj[i].add(j)
        adj[j].add(i)
    seen, todo = {0}, deque([0])
    while todo:
        for v in adj[todo.popleft()] - seen:
            seen.add(v)
            todo.append(v)
    return len(seen) == n


def random_connected_network(rng, noise=ADDITIVE, radius=4.0):
    while True:
        n = int(rng.integers(3, 9))
        pts = rng.uniform(0, 10, size=(n, 2))
        edges = sensing_edges(pts, radius)
        if connected(n, edges):
            return pts, MeasurementGraph(edges, noise)


def spectra_close(a, b, rel):
    scale = max(1.0, float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) <= rel * scale


def test_1_fim_structure():
    tic = time.perf_counter()
    rng = np.random.default_rng(1)
    bad = []
    rigid_count = 0
    for k in range(200):
        pts, graph = random_connected_network(rng)
        F = build_fim(pts, graph)
        scale = max(1.0, float(np.max(np.abs(F))))
        if np.max(np.abs(F - F.T)) > 1e-12 * scale:
            bad.append((k, "asymmetric"))
        eig = eigenvalues_symmetric(F)
        tol = 1e-9 * max(1.0, eig[-1])
        if eig[0] < -tol:
            bad.append((k, "not PSD"))
        if rigidity_eigenvalue(pts, graph) > 1e-6:
            rigid_count += 1
            if int(np.sum(np.abs(eig) < tol)) != 3:
                bad.append((k, "trivial spectrum"))
    elapsed = time.perf_counter() - tic
    record(1, "FIM structure suite", not bad and elapsed < 10,
           f"200 networks ({rigid_count} rigid), {len(bad)} violations, {elapsed:.2f} s")


def test_2_closed_form_spectra():
    problems = []
    for sigma in (0.5, 1.0, 2.0):
        F = build_fim([(0, 0), (1, 0)], MeasurementGraph(((0, 1),), NoiseModel("additive", sigma)))
        want = jacobi_eigenvalues(F)[-1]
        if abs(want - 2 / sigma**2) > 1e-9 or abs(eigenvalues_symmetric(F)[-1] - want) > 1e-9:
            problems.append(f"edge sigma={sigma}")
    tri = [(0.0, 0.0), (1.0, 0.0), (0.5, math.sqrt(3) / 2)]
    all3 = MeasurementGraph(((0, 1), (0, 2), (1, 2)), ADDITIVE)
    oracle = jacobi_eigenvalues(build_fim(tri, all3))[3]
    got = rigidity_eigenvalue(tri, all3)
    if abs(oracle - 1.5) > 1e-9 or abs(got - 1.5) > 1e-9:
        problems.append(f"triangle {got!r}")
    line = [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]
    if not rigidity_eigenvalue(line, all3) < 1e-9 or not jacobi_eigenvalues(build_fim(line, all3))[3] < 1e-9:
        problems.append("collinear")
    record(2, "closed-form spectra", not problems,
           f"edge 2/sigma^2, triangle {got:.12f}, collinear 0" if not problems else ", ".join(problems))


def _rotation(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def test_3_invariance():
    rng = np.random.default_rng(3)
    fails = {"translation": 0, "rotation": 0, "additive scale": 0, "multiplicative scale": 0, "sigma law": 0}
    for _ in range(100):
        pts, graph = random_connected_network(rng)
        base = eigenvalues_symmetric(build_fim(pts, graph))
        shift = rng.uniform(-50, 50, size=2)
        if not spectra_close(eigenvalues_symmetric(build_fim(pts + shift, graph)), base, 1e-8):
            fails["translation"] += 1
        pivot = rng.uniform(0, 10, size=2)
        turned = (pts - pivot) @ _rotation(rng.uniform(0, 2 * math.pi)).T + pivot
        if not spectra_close(eigenvalues_symmetric(build_fim(turned, graph)), base, 1e-8):
            fails["rotation"] += 1
        s = rng.uniform(0.2, 5.0)
        if not spectra_close(eigenvalues_symmetric(build_fim(pts * s, graph)), base, 1e-9):
            fails["additive scale"] += 1
        mgraph = MeasurementGraph(graph.edges, NoiseModel("multiplicative", 1.0))
        mbase = eigenvalues_symmetric(build_fim(pts, mgraph))
        if not spectra_close(eigenvalues_symmetric(build_fim(pts * s, mgraph)), mbase / s**2, 1e-8):
            fails["multiplicative scale"] += 1
        sigma = rng.uniform(0.1, 3.0)
        sgraph = MeasurementGraph(graph.edges, NoiseModel("additive", sigma))
        if not spectra_close(eigenvalues_symmetric(build_fim(pts, sgraph)), base / sigma**2, 1e-12):
            fails["sigma law"] += 1
    record(3, "invariance suite", not any(fails.values()),
           "100 cases each, failures: " + ", ".join(f"{k}={v}" for k, v in fails.items()))


def test_4_eigensolver_oracle():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 9))
        pts = rng.uniform(0, 10, size=(n, 2))
        edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.6] or [(0, 1)]
        F = build_fim(pts, MeasurementGraph(edges, NoiseModel("additive", rng.uniform(0.2, 2.0))))
        diff = np.max(np.abs(eigenvalues_symmetric(F) - np.array(jacobi_eigenvalues(F))))
        worst = max(worst, float(diff))
    record(4, "eigensolver oracle equivalence", worst <= 1e-8,
           f"max |production - Jacobi| = {worst:.2e} over 100 FIMs up to 16x16")


def test_5_planner_soundness():
    tic = time.perf_counter()
    summary = []
    ok = True
    for path in bundled_scenario_paths():
        scenario = load_scenario(path)
        _, problem = build_problem(scenario)
        try:
            ts = plan_all(problem)
        except PlanningError as exc:
            ok = False
            summary.append(f"{scenario.name} failed ({exc})")
            continue
        rep = validate_solution(ts, problem)
        good = (rep.passed and rep.num_collisions == 0 and rep.num_invalid_moves == 0
                and rep.percent_rigid == 100 and problem.min_rigidity == 0.1)
        ok &= good
        summary.append(f"{scenario.name} {rep.percent_rigid:.0f}%")
    elapsed = time.perf_counter() - tic
    record(5, "planner soundness", ok and len(summary) == 5 and elapsed < 120,
           f"{', '.join(summary)}; {elapsed:.1f} s")


def test_6_search_optimality():
    rng = np.random.default_rng(6)
    checked, mismatches = 0, []
    while checked < 20:
        cells = [(x, y) for x in range(8) for y in range(8)]
        blocked = [cells[k] for k in rng.choice(64, size=int(rng.integers(4, 14)), replace=False)]
        obstacles = tuple(((x - 0.3, y - 0.3), (x + 0.3, y - 0.3), (x + 0.3, y + 0.3), (x - 0.3, y + 0.3))
                          for x, y in blocked)
        graph = build_planning_graph(Workspace((0, 0, 7, 7), obstacles), 1, 2)
        free = [c for c in cells if c not in blocked]
        s, g = (free[k] for k in rng.choice(len(free), size=2, replace=False))
        problem = PlanningProblem(graph, [graph.node_at(s)], [graph.node_at(g)], 2.0, ADDITIVE, 0.0)
        try:
            table = construct_valid_sets(0, [], set(), problem)
        except HorizonExceeded:
            continue
        path = plan_single(0, table, problem)
        best = bfs_earliest_arrival(table, problem.start_of(0), problem.goal_of(0), graph.adjacency)
        if len(path) - 1 != best:
            mismatches.append((s, g, len(path) - 1, best))
        checked += 1
    record(6, "search optimality", not mismatches,
           f"{checked} random 8x8 problems, {len(mismatches)} differ from BFS")


def test_7_conflict_mechanism():
    _, problem = build_problem(bundled_scenario("corridor_6"))
    try:
        ts = plan_all(problem)
        stats, outcome = ts.stats, "success"
        valid = validate_solution(ts, problem).passed
    except PlanningError as exc:
        stats, outcome, valid = getattr(exc, "stats", None), "PlanningFailed", True
    conflicts = stats.num_conflicts if stats else 0
    worst = max(stats.attempts.values()) if stats else 0
    record(7, "conflict mechanism", conflicts >= 1 and valid and worst <= 50,
           f"{conflicts} conflicts, {outcome}, most attempts for one agent {worst}, valid={valid}")


def test_8_baseline_trend():
    tic = time.perf_counter()
    scenarios = [load_scenario(p) for p in bundled_scenario_paths()]
    table = run_compare(scenarios, seeds=range(20), localization_seeds=range(20))
    rows = {}
    for row in table.rows:
        rows.setdefault(row.scenario, {})[row.algorithm] = row
    makespan_ok = rigid_ok = error_ok = 0
    rcgp_all_rigid = True
    parts = []
    for name, pair in sorted(rows.items()):
        rc, rr = pair["rcgp"], pair["rrt"]
        rc_ms, rr_ms = rc.metric("makespan"), rr.metric("makespan")
        rc_max, rr_max = rc.metric("max_localization_error"), rr.metric("max_localization_error")
        rr_rigid = rr.metric("percent_rigid")
        rcgp_all_rigid &= rc.metric("percent_rigid") == 100
        makespan_ok += rr_ms is not None and rc_ms is not None and rr_ms >= rc_ms
        rigid_ok += rr_rigid is not None and rr_rigid < 100
        error_ok += rr_max is not None and rc_max is not None and rc_max <= rr_max
        parts.append(f"{name}: ms {rc_ms}/{rr_ms}, rigid 100/{rr_rigid:.0f}, "
                     f"max err {rc_max:.3f}/{rr_max:.3f}, rrt ok {len(rr.successes)}/20")
    elapsed = time.perf_counter() - tic
    ok = makespan_ok >= 4 and rigid_ok >= 1 and rcgp_all_rigid and error_ok >= 4 and elapsed < 900
    for line in parts:
        print(line)
    record(8, "baseline comparison trend", ok,
           f"(a) {makespan_ok}/5, (b) {rigid_ok} below 100 with RCGP all 100={rcgp_all_rigid}, "
           f"(c) {error_ok}/5; {elapsed:.0f} s")


def _exact_samples(config, edges):
    out = []
    for i, j in edges:
        d = float(np.linalg.norm(config[i] - config[j]))
        out.append(RangeSample(i, j, d, d))
    return out


def test_9_localization_sanity():
    hexagon = np.array([(2 * math.cos(a), 2 * math.sin(a)) for a in np.arange(6) * math.pi / 3])
    edges = sensing_edges(hexagon, 4.0)
    initial = hexagon + np.random.default_rng(9).normal(0, 0.1, size=hexagon.shape)
    anchors = {k: hexagon[k] for k in (0, 2, 4)}
    rigid = localize(_exact_samples(hexagon, edges), anchors, 6, initial, truth=hexagon)

    line = np.array([(float(x), 0.0) for x in range(5)])
    flex_edges = [(0, 1), (1, 2), (0, 2), (2, 3), (2, 4), (3, 4)]
    start = line.copy()
    start[3:] += (0.0, 0.1)
    flex = localize(_exact_samples(line, flex_edges), {k: line[k] for k in range(3)}, 5, start, truth=line)
    record(9, "localization sanity", rigid.max_error < 1e-6 and flex.cost < 1e-9 and flex.max_error > 1e-3,
           f"rigid max error {rigid.max_error:.1e}; collinear residual {flex.cost:.1e}, "
           f"max error {flex.max_error:.3f}")


def test_10_determinism(tmp_path, capsys):
    outs = []
    for k in range(2):
        path = tmp_path / f"run{k}.json"
        code = main(["compare", "--bundled", "--seeds", "0,1,2", "--loc-seeds", "3",
                     "--no-timing", "--out", str(path)])
        capsys.readouterr()
        assert code == 0
        outs.append(path.read_bytes())
    rows = json.loads(outs[0])["rows"]
    record(10, "determinism", outs[0] == outs[1] and len(rows) == 10,
           f"two compare runs, {len(rows)} rows, {len(outs[0])} bytes, identical={outs[0] == outs[1]}")


def test_11_cache_efficacy():
    _, problem = build_problem(bundled_scenario("corridor_6"))
    cache = RigidityCache()
    with_cache = plan_all(problem, cache=cache)
    without = plan_all(problem, cache=RigidityCache(enabled=False))
    same = np.array_equal(with_cache.nodes, without.nodes)
    record(11, "cache efficacy", cache.hit_rate > 0.30 and same,
           f"hit rate {cache.hit_rate:.1%} over {cache.hits + cache.misses} checks "
           f"({with_cache.stats.num_conflicts} conflicts), identical without cache={same}")

