"""Range-only anchored localization used to score trajectories.

Positions are recovered by nonlinear least squares on the measured ranges
with three nodes per timestep acting as anchors of known position.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .planner import PlanningProblem, TrajectorySet, timestep_rigidity
from .rigidity import NoiseKind, NoiseModel, as_configuration, sensing_edges

logger = logging.getLogger(__name__)

NUM_ANCHORS = 3
MAX_ITERATIONS = 200
GRADIENT_TOL = 1e-8
DIVERGENCE_COST = 1e6
LAMBDA_INIT, LAMBDA_MIN, LAMBDA_MAX = 1e-3, 1e-12, 1e6


class LocalizationError(RuntimeError):
    pass


class InsufficientAnchors(LocalizationError):
    pass


class UnderdeterminedNode(LocalizationError):
    """A free node has fewer than two range measurements."""


class DivergedEstimate(LocalizationError):
    pass


@dataclass(frozen=True)
class RangeSample:
    i: int
    j: int
    measured: float
    truth: float


@dataclass
class LocalizationResult:
    estimated: np.ndarray
    anchors: frozenset
    per_node_error: np.ndarray
    mean_error: float
    max_error: float
    converged: bool
    cost: float
    iterations: int


def simulate_ranges(config, edges, noise: NoiseModel, seed=None) -> list[RangeSample]:
    """Noisy ranges for every edge, clamped at zero.

    ``seed`` may be an int, a sequence of ints or a ``numpy`` Generator.
    """
    config = as_configuration(config)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    edges = list(edges)
    if not edges:
        return []
    e = np.asarray(edges, dtype=int)
    truth = np.linalg.norm(config[e[:, 0]] - config[e[:, 1]], axis=1)
    draws = rng.normal(0.0, noise.sigma, size=len(e))
    if noise.kind is NoiseKind.ADDITIVE:
        measured = truth + draws
    else:
        measured = truth * (1.0 + draws)
    measured = np.maximum(measured, 0.0)
    return [RangeSample(int(a), int(b), float(m), float(r))
            for (a, b), m, r in zip(e, measured, truth)]


def _residuals(pts, ii, jj, measured):
    diff = pts[ii] - pts[jj]
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return dist - measured, diff, dist


def localize(samples: Sequence[RangeSample], anchors: Mapping[int, Sequence[float]], n: int,
             initial, truth=None) -> LocalizationResult:
    """Levenberg-Marquardt fit of the free node positions to the measured ranges.

    Minimizes ``sum((|p_i - p_j| - measured)**2)`` with anchor nodes held at
    their given positions, starting from ``initial``. Converged means the
    gradient norm fell below 1e-8 before 200 iterations. Errors are reported
    against ``truth`` when given (zero otherwise).
    """
    if len(anchors) < NUM_ANCHORS:
        raise InsufficientAnchors(f"need {NUM_ANCHORS} anchors, got {len(anchors)}")
    pts = as_configuration(initial).copy()
    if len(pts) != n:
        raise ValueError(f"initial guess has {len(pts)} nodes, expected {n}")
    for k, pos in anchors.items():
        pts[k] = pos
    free = [k for k in range(n) if k not in anchors]
    ii = np.array([s.i for s in samples], dtype=int)
    jj = np.array([s.j for s in samples], dtype=int)
    measured = np.array([s.measured for s in samples], dtype=float)
    degree = np.bincount(np.concatenate([ii, jj]), minlength=n) if len(samples) else np.zeros(n, int)
    thin = [k for k in free if degree[k] < 2]
    if thin:
        raise UnderdeterminedNode(f"nodes {thin} have fewer than two range measurements")

    slot = -np.ones(n, dtype=int)
    slot[free] = np.arange(len(free))
    m, dof = len(samples), 2 * len(free)
    rows = np.arange(m)

    def jacobian(diff, dist):
        unit = diff / np.where(dist > 0, dist, 1.0)[:, None]
        J = np.zeros((m, dof))
        for nodes, sign in ((ii, 1.0), (jj, -1.0)):
            s = slot[nodes]
            mask = s >= 0
            J[rows[mask], 2 * s[mask]] = sign * unit[mask, 0]
            J[rows[mask], 2 * s[mask] + 1] = sign * unit[mask, 1]
        return J

    r, diff, dist = _residuals(pts, ii, jj, measured)
    cost = float(r @ r)
    if not np.isfinite(cost) or cost > DIVERGENCE_COST:
        raise DivergedEstimate(f"initial cost {cost:.3g} is out of range")
    lam = LAMBDA_INIT
    converged = False
    it = 0
    free_idx = np.array(free, dtype=int)
    while dof and it < MAX_ITERATIONS:
        J = jacobian(diff, dist)
        grad = J.T @ r
        if np.linalg.norm(grad) < GRADIENT_TOL:
            converged = True
            break
        it += 1
        improved = False
        while True:
            aug = np.vstack([J, np.sqrt(lam) * np.eye(dof)])
            rhs = np.concatenate([-r, np.zeros(dof)])
            step = np.linalg.lstsq(aug, rhs, rcond=None)[0]
            trial = pts.copy()
            trial[free_idx] += step.reshape(-1, 2)
            r_new, diff_new, dist_new = _residuals(trial, ii, jj, measured)
            cost_new = float(r_new @ r_new)
            if not np.isfinite(cost_new) or cost_new > DIVERGENCE_COST:
                raise DivergedEstimate(f"cost reached {cost_new:.3g}")
            if cost_new < cost:
                pts, r, diff, dist, cost = trial, r_new, diff_new, dist_new, cost_new
                lam = max(lam / 10.0, LAMBDA_MIN)
                improved = True
                break
            if lam >= LAMBDA_MAX:
                break
            lam = min(lam * 10.0, LAMBDA_MAX)
        if not improved:
            # no descent even at maximum damping: a stationary point to working precision
            converged = bool(np.linalg.norm(J.T @ r) < GRADIENT_TOL)
            break
    else:
        if not dof:
            converged = True

    if truth is None:
        errors = np.zeros(n)
    else:
        errors = np.linalg.norm(pts - as_configuration(truth), axis=1)
        errors[list(anchors)] = 0.0
    free_err = errors[free] if free else np.zeros(1)
    return LocalizationResult(
        estimated=pts,
        anchors=frozenset(anchors),
        per_node_error=errors,
        mean_error=float(free_err.mean()),
        max_error=float(free_err.max()),
        converged=converged,
        cost=cost,
        iterations=it,
    )


@dataclass
class EvaluationSummary:
    avg_error: float
    max_error: float
    per_seed_avg: list[float]
    per_seed_max: list[float]
    flagged: list[tuple[int, int, str]] = field(default_factory=list)
    evaluated: int = 0

    def as_dict(self) -> dict:
        return {
            "avg_localization_error": self.avg_error,
            "max_localization_error": self.max_error,
            "evaluated_timesteps": self.evaluated,
            "flagged_timesteps": len(self.flagged),
        }


def localize_timestep(config: np.ndarray, sensing_radius: float, noise: NoiseModel,
                      rng: np.random.Generator) -> LocalizationResult:
    """Simulate ranges, draw 3 anchors and localize one configuration."""
    n = len(config)
    edges = sensing_edges(config, sensing_radius)
    samples = simulate_ranges(config, edges, noise, rng)
    anchor_ids = sorted(rng.choice(n, size=NUM_ANCHORS, replace=False).tolist())
    initial = config + rng.normal(0.0, noise.sigma, size=config.shape)
    anchors = {k: config[k] for k in anchor_ids}
    return localize(samples, anchors, n, initial, truth=config)


def evaluate_trajectories(trajectories: TrajectorySet, problem: PlanningProblem,
                          num_seeds: int = 20, seeds: Sequence[int] | None = None,
                          noise: NoiseModel | None = None) -> EvaluationSummary:
    """Average and maximum localization error over all timesteps and seeds.

    Each (seed, timestep) pair draws its own ranges, anchors and initial
    guess from ``default_rng([seed, t])``. Timesteps whose localization raises
    are flagged and left out of the statistics.
    """
    noise = problem.noise if noise is None else noise
    seeds = list(range(num_seeds)) if seeds is None else list(seeds)
    n = trajectories.num_agents
    if n < NUM_ANCHORS:
        raise InsufficientAnchors(f"{n} agents cannot provide {NUM_ANCHORS} anchors")
    per_seed_avg, per_seed_max = [], []
    flagged = []
    total, count, worst = 0.0, 0, 0.0
    for seed in seeds:
        s_total, s_count, s_worst = 0.0, 0, 0.0
        for t in range(trajectories.horizon):
            rng = np.random.default_rng([int(seed), t])
            config = trajectories.at(t)
            try:
                res = localize_timestep(config, problem.sensing_radius, noise, rng)
            except LocalizationError as exc:
                flagged.append((int(seed), t, type(exc).__name__))
                continue
            free = [k for k in range(n) if k not in res.anchors]
            err = res.per_node_error[free]
            s_total += float(err.sum())
            s_count += len(free)
            s_worst = max(s_worst, float(err.max()))
        per_seed_avg.append(s_total / s_count if s_count else float("nan"))
        per_seed_max.append(s_worst)
        total += s_total
        count += s_count
        worst = max(worst, s_worst)
    return EvaluationSummary(
        avg_error=total / count if count else float("nan"),
        max_error=worst,
        per_seed_avg=per_seed_avg,
        per_seed_max=per_seed_max,
        flagged=flagged,
        evaluated=len(seeds) * trajectories.horizon - len(flagged),
    )


def percent_rigid(trajectories: TrajectorySet, problem: PlanningProblem) -> float:
    """Share of timesteps (over the padded horizon) whose full network meets the minimum."""
    rigid = sum(timestep_rigidity(trajectories.at(t), problem)[1]
                for t in range(trajectories.horizon))
    return 100.0 * rigid / trajectories.horizon
