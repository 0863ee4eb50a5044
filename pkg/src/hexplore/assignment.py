"""Allocation of view clusters to robots by an elitist genetic search.

The problem is abstract here: an execution-cost matrix (robot x
cluster), a transition tensor (robot x from x to, with a virtual start
row), cluster labels, and optionally a reference solution to stay close
to.  A solution assigns every cluster to exactly one robot and orders
each robot's share.

Encoding keeps one sequence per robot.  Mutation works species by
species: the member robots' sequences are concatenated in id order,
one reordering move is applied (position swap, cyclic shift of an
interval, or reshuffle of an interval), and the result is re-split at
fresh random cut points.  Clusters therefore move freely between
robots of one species; the split across species comes from population
diversity at initialization.

Fitness sums three terms: total route cost, the slowest robot's cost,
and a decaying penalty for drifting away from the reference routes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import GaConfig, LABEL_ANY, PlannerParams

log = logging.getLogger(__name__)


@dataclass
class AssignmentProblem:
    delta: np.ndarray              # (R, C) execution cost, inf when barred
    transitions: np.ndarray        # (R, C+1, C); row C is from the robot's start
    labels: list[str]              # per-cluster label
    species_of_robot: list[str]    # robot index -> species name
    centers: Optional[np.ndarray] = None   # (C, 3) cluster centers, for deviation

    @property
    def n_robots(self) -> int:
        return self.delta.shape[0]

    @property
    def n_clusters(self) -> int:
        return self.delta.shape[1]


@dataclass(frozen=True)
class Individual:
    routes: tuple[tuple[int, ...], ...]    # per robot, ordered cluster indices


@dataclass
class GaResult:
    best: Individual
    best_fitness: float
    route_costs: np.ndarray
    history: list[float] = field(default_factory=list)
    dropped_clusters: list[int] = field(default_factory=list)


def route_cost(problem: AssignmentProblem, robot: int, seq: Sequence[int]) -> float:
    """Travel plus execution along one robot's ordered clusters."""
    if not seq:
        return 0.0
    total = 0.0
    prev = problem.n_clusters           # the virtual start row
    for c in seq:
        total += problem.transitions[robot, prev, c] + problem.delta[robot, c]
        prev = c
    return float(total)


def solution_costs(problem: AssignmentProblem, ind: Individual) -> np.ndarray:
    return np.array(
        [route_cost(problem, r, ind.routes[r]) for r in range(problem.n_robots)]
    )


def point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    denom = float(np.dot(ab, ab))
    if denom < 1e-18:
        return float(np.linalg.norm(p - a))
    t = float(np.clip(np.dot(p - a, ab) / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


def route_deviation(
    seq: Sequence[int],
    centers: np.ndarray,
    reference: Optional[np.ndarray],
    decay: float,
) -> float:
    """Discounted distance of a route from its reference polyline.

    Early clusters weigh most; an empty reference costs nothing, and a
    single-point reference degenerates to point distances.
    """
    if reference is None or len(reference) == 0 or not seq:
        return 0.0
    total = 0.0
    for i, c in enumerate(seq, start=1):
        p = centers[c]
        if len(reference) == 1:
            d = float(np.linalg.norm(p - reference[0]))
        else:
            d = min(
                point_segment_distance(p, reference[j], reference[j + 1])
                for j in range(len(reference) - 1)
            )
        total += math.exp(-decay * i) * d
    return total


def fitness(
    problem: AssignmentProblem,
    ind: Individual,
    params: PlannerParams,
    reference: Optional[dict[int, np.ndarray]] = None,
) -> float:
    costs = solution_costs(problem, ind)
    value = params.fitness_total_weight * costs.sum() + params.fitness_max_weight * costs.max()
    if reference is not None and problem.centers is not None:
        dev = sum(
            route_deviation(
                ind.routes[r],
                problem.centers,
                reference.get(r),
                params.deviation_decay,
            )
            for r in range(problem.n_robots)
        )
        value += params.fitness_deviation_weight * dev
    return float(value)


def select_reference(max_lengths: dict[int, float]) -> Optional[int]:
    """Sender whose solution has the shortest worst route; low id on ties."""
    if not max_lengths:
        return None
    return min(max_lengths, key=lambda s: (max_lengths[s], s))


class _Evaluator:
    """Batched fitness over a population.

    Routes are padded with a sentinel equal to the cluster count, which
    doubles as the virtual start row: execution cost, transition column
    and deviation all read zero there, so padding never contributes.
    """

    def __init__(
        self,
        problem: AssignmentProblem,
        params: PlannerParams,
        reference: Optional[dict[int, np.ndarray]],
    ):
        self.problem = problem
        self.params = params
        n, c = problem.n_robots, problem.n_clusters
        self.delta_pad = np.concatenate(
            [problem.delta, np.zeros((n, 1))], axis=1
        )
        self.trans_pad = np.concatenate(
            [problem.transitions, np.zeros((n, c + 1, 1))], axis=2
        )
        self.dev_pad = None
        if reference is not None and problem.centers is not None:
            dev = np.zeros((n, c + 1))
            for r in range(n):
                ref = reference.get(r)
                if ref is None or len(ref) == 0:
                    continue
                for cl in range(c):
                    p = problem.centers[cl]
                    if len(ref) == 1:
                        dev[r, cl] = np.linalg.norm(p - ref[0])
                    else:
                        dev[r, cl] = min(
                            point_segment_distance(p, ref[j], ref[j + 1])
                            for j in range(len(ref) - 1)
                        )
            self.dev_pad = dev

    def __call__(self, population: list[Individual]) -> np.ndarray:
        n, c = self.problem.n_robots, self.problem.n_clusters
        p = len(population)
        totals = np.zeros(p)
        worst = np.zeros(p)
        devs = np.zeros(p)
        for r in range(n):
            length = max(len(ind.routes[r]) for ind in population)
            if length == 0:
                continue
            seq = np.full((p, length), c, dtype=np.intp)
            for i, ind in enumerate(population):
                route = ind.routes[r]
                seq[i, : len(route)] = route
            prev = np.concatenate(
                [np.full((p, 1), c, dtype=np.intp), seq[:, :-1]], axis=1
            )
            cost = self.delta_pad[r][seq].sum(axis=1)
            cost += self.trans_pad[r][prev, seq].sum(axis=1)
            totals += cost
            np.maximum(worst, cost, out=worst)
            if self.dev_pad is not None:
                w = np.exp(-self.params.deviation_decay * np.arange(1, length + 1))
                devs += self.dev_pad[r][seq] @ w
        return (
            self.params.fitness_total_weight * totals
            + self.params.fitness_max_weight * worst
            + self.params.fitness_deviation_weight * devs
        )


# ---------- search ----------

def _species_groups(problem: AssignmentProblem) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = {}
    for r, name in enumerate(problem.species_of_robot):
        groups.setdefault(name, []).append(r)
    for members in groups.values():
        members.sort()
    return groups


def _split_at_cuts(seq: list[int], n_parts: int, rng: np.random.Generator) -> list[list[int]]:
    if n_parts == 1:
        return [list(seq)]
    cuts = np.sort(rng.integers(0, len(seq) + 1, size=n_parts - 1))
    parts = []
    prev = 0
    for cut in cuts:
        parts.append(list(seq[prev:cut]))
        prev = int(cut)
    parts.append(list(seq[prev:]))
    return parts


def random_individual(
    problem: AssignmentProblem, rng: np.random.Generator
) -> Individual:
    groups = _species_groups(problem)
    chosen: dict[str, list[int]] = {name: [] for name in groups}
    for c, label in enumerate(problem.labels):
        if label == LABEL_ANY:
            options = sorted(groups)
        else:
            options = [label] if label in groups else sorted(groups)
        pick = options[int(rng.integers(0, len(options)))]
        chosen[pick].append(c)
    routes: list[list[int]] = [[] for _ in range(problem.n_robots)]
    for name in sorted(groups):
        pool = chosen[name]
        if not pool:
            continue
        order = [pool[i] for i in rng.permutation(len(pool))]
        parts = _split_at_cuts(order, len(groups[name]), rng)
        for robot, part in zip(groups[name], parts):
            routes[robot] = part
    return Individual(tuple(tuple(r) for r in routes))


def greedy_individual(problem: AssignmentProblem) -> Individual:
    """Cheapest-insertion seed: best robot and position per cluster."""
    routes: list[list[int]] = [[] for _ in range(problem.n_robots)]
    costs = [0.0] * problem.n_robots
    order = sorted(
        range(problem.n_clusters),
        key=lambda c: -float(np.min(np.where(np.isfinite(problem.delta[:, c]),
                                             problem.delta[:, c], np.inf))),
    )
    for c in order:
        best = None
        for r in range(problem.n_robots):
            if not np.isfinite(problem.delta[r, c]):
                continue
            for pos in range(len(routes[r]) + 1):
                trial = routes[r][:pos] + [c] + routes[r][pos:]
                rc = route_cost(problem, r, trial)
                if not math.isfinite(rc):
                    continue
                grown = max(costs[i] if i != r else rc for i in range(problem.n_robots))
                key = (grown, sum(costs) - costs[r] + rc, r, pos)
                if best is None or key < best[0]:
                    best = (key, r, pos, rc)
        if best is None:
            continue  # nobody can take it; the caller drops such clusters
        _, r, pos, rc = best
        routes[r].insert(pos, c)
        costs[r] = rc
    return Individual(tuple(tuple(r) for r in routes))


def mutate(
    problem: AssignmentProblem,
    ind: Individual,
    cfg: GaConfig,
    rng: np.random.Generator,
) -> Individual:
    groups = _species_groups(problem)
    routes = [list(r) for r in ind.routes]
    for name in sorted(groups):
        members = groups[name]
        concat: list[int] = []
        for r in members:
            concat.extend(routes[r])
        if len(concat) >= 2:
            u = rng.random()
            if u < cfg.swap_weight:
                i, j = rng.choice(len(concat), size=2, replace=False)
                concat[i], concat[j] = concat[j], concat[i]
            elif u < cfg.swap_weight + cfg.shift_weight:
                a = int(rng.integers(0, len(concat) - 1))
                b = int(rng.integers(a + 2, len(concat) + 1))
                concat[a:b] = concat[a + 1 : b] + [concat[a]]
            else:
                a = int(rng.integers(0, len(concat) - 1))
                b = int(rng.integers(a + 2, len(concat) + 1))
                mid = [concat[a + k] for k in rng.permutation(b - a)]
                concat[a:b] = mid
        parts = _split_at_cuts(concat, len(members), rng)
        for robot, part in zip(members, parts):
            routes[robot] = part
    return Individual(tuple(tuple(r) for r in routes))


def drop_unservable(problem: AssignmentProblem) -> tuple[AssignmentProblem, list[int]]:
    """Remove clusters no robot can execute; report their indices."""
    feasible = np.isfinite(problem.delta).any(axis=0)
    if feasible.all():
        return problem, []
    keep = np.nonzero(feasible)[0]
    dropped = [int(c) for c in np.nonzero(~feasible)[0]]
    start = problem.n_clusters
    rows = np.concatenate([keep, [start]])
    reduced = AssignmentProblem(
        delta=problem.delta[:, keep],
        transitions=problem.transitions[:, rows][:, :, keep],
        labels=[problem.labels[c] for c in keep],
        species_of_robot=problem.species_of_robot,
        centers=problem.centers[keep] if problem.centers is not None else None,
    )
    return reduced, dropped


def evolve(
    problem: AssignmentProblem,
    cfg: GaConfig,
    rng: np.random.Generator,
    params: Optional[PlannerParams] = None,
    reference: Optional[dict[int, np.ndarray]] = None,
) -> GaResult:
    """Elitist loop; the returned routes use the caller's cluster indices.

    Unservable clusters are dropped first and reported, so a solution
    always exists.  Fitness never worsens across generations.
    """
    params = params or PlannerParams()
    original = problem
    problem, dropped = drop_unservable(problem)
    if problem.n_clusters == 0:
        empty = Individual(tuple(() for _ in range(problem.n_robots)))
        return GaResult(empty, 0.0, np.zeros(problem.n_robots), [0.0], dropped)

    evaluate = _Evaluator(problem, params, reference)
    population = [greedy_individual(problem)]
    population.extend(
        random_individual(problem, rng) for _ in range(cfg.population - 1)
    )
    scores = evaluate(population)
    best_i = int(np.argmin(scores))
    best, best_fit = population[best_i], float(scores[best_i])
    history = [best_fit]

    n_elite = max(1, int(cfg.elite_fraction * cfg.population))
    for _ in range(cfg.generations):
        order = np.argsort(scores, kind="stable")
        elites = [population[i] for i in order[:n_elite]]
        elite_scores = scores[order[:n_elite]]
        children = []
        while len(children) < cfg.population - n_elite:
            parent = elites[int(rng.integers(0, n_elite))]
            children.append(mutate(problem, parent, cfg, rng))
        child_scores = evaluate(children)
        population = elites + children
        scores = np.concatenate([elite_scores, child_scores])
        gen_best = int(np.argmin(scores))
        if scores[gen_best] < best_fit:
            best, best_fit = population[gen_best], float(scores[gen_best])
        history.append(best_fit)

    costs = solution_costs(problem, best)
    if dropped:
        gone = set(dropped)
        keep = [c for c in range(original.n_clusters) if c not in gone]
        best = Individual(
            tuple(tuple(keep[c] for c in route) for route in best.routes)
        )
        log.info("dropped %d unservable clusters", len(dropped))
    return GaResult(best, best_fit, costs, history, dropped)
