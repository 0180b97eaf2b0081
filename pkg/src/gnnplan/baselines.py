"""Classical comparators: Dijkstra, PRM, Lazy-PRM and first-solution RRT*."""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .graph import Rgg
from .world import (CollisionCounter, ProblemInstance, default_resolution, edges_free,
                    read_counter, segment_free)

EdgeOracle = Callable[[int, int], bool]


@dataclass(frozen=True)
class Path:
    """A feasible path: graph node indices (graph planners) and waypoint states."""

    states: np.ndarray
    cost: float
    nodes: Optional[tuple[int, ...]] = None

    @property
    def n_waypoints(self) -> int:
        return int(self.states.shape[0])


@dataclass
class PlanResult:
    success: bool
    path: Optional[Path] = None
    reason: str = ""
    edge_checks: int = 0
    point_checks: int = 0
    build_time: float = 0.0
    plan_time: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def cost(self) -> Optional[float]:
        return self.path.cost if self.success and self.path is not None else None


def path_cost(states: np.ndarray) -> float:
    if len(states) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(states, axis=0), axis=1).sum())


def graph_path(rgg: Rgg, nodes) -> Path:
    nodes = tuple(int(v) for v in nodes)
    states = rgg.nodes[list(nodes)]
    return Path(states=np.array(states), cost=path_cost(states), nodes=nodes)


def path_is_valid(problem: ProblemInstance, path: Path, resolution: Optional[float] = None) -> bool:
    """Independent re-validation of every segment (uncharged scratch counter)."""
    res = default_resolution(problem.world) if resolution is None else resolution
    scratch = CollisionCounter()
    s = path.states
    if s.shape[0] == 1:
        return segment_free(problem.world, s[0], s[0], res, scratch)
    return bool(edges_free(problem.world, s[:-1], s[1:], res, scratch).all())


def dijkstra(rgg: Rgg, edge_valid: EdgeOracle, source: int, target: int) -> Optional[Path]:
    """Shortest path by summed Euclidean edge length over edges accepted by ``edge_valid``.

    Among equal-cost routes the predecessor with the smaller index wins.
    Returns ``None`` when ``target`` is unreachable.
    """
    n = rgg.n_nodes
    dist = [math.inf] * n
    pred = [-1] * n
    done = [False] * n
    dist[source] = 0.0
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        if u == target:
            break
        for v in rgg.adjacency[u]:
            if done[v]:
                continue
            nd = d + rgg.edge_length(u, v)
            if nd < dist[v] or (nd == dist[v] and u < pred[v]):
                if not edge_valid(u, v):
                    continue
                if nd < dist[v]:
                    heapq.heappush(heap, (nd, v))
                dist[v] = nd
                pred[v] = u
    if not done[target]:
        return None
    seq = [target]
    while seq[-1] != source:
        seq.append(pred[seq[-1]])
    seq.reverse()
    return graph_path(rgg, seq)


def _result(success, path, reason, counter, t0, **extras) -> PlanResult:
    e, p = read_counter(counter)
    return PlanResult(success=success, path=path, reason=reason, edge_checks=e,
                      point_checks=p, plan_time=time.perf_counter() - t0, extras=extras)


def validate_all_edges(problem: ProblemInstance, rgg: Rgg, counter: CollisionCounter,
                       resolution: Optional[float] = None) -> set[tuple[int, int]]:
    res = default_resolution(problem.world) if resolution is None else resolution
    if not rgg.edges:
        return set()
    pairs = np.array(rgg.edges)
    ok = edges_free(problem.world, rgg.nodes[pairs[:, 0]], rgg.nodes[pairs[:, 1]], res, counter)
    return {e for e, good in zip(rgg.edges, ok.tolist()) if good}


def prm_plan(problem: ProblemInstance, rgg: Rgg, counter: Optional[CollisionCounter] = None,
             resolution: Optional[float] = None) -> PlanResult:
    """Validate every roadmap edge up front, then search the validated graph."""
    counter = CollisionCounter() if counter is None else counter
    t0 = time.perf_counter()
    valid = validate_all_edges(problem, rgg, counter, resolution)
    path = dijkstra(rgg, lambda i, j: (min(i, j), max(i, j)) in valid, rgg.init, rgg.goal)
    if path is None:
        return _result(False, None, "goal unreachable over valid edges", counter, t0)
    return _result(True, path, "", counter, t0)


def lazy_prm_plan(problem: ProblemInstance, rgg: Rgg, counter: Optional[CollisionCounter] = None,
                  resolution: Optional[float] = None) -> PlanResult:
    """Lazy PRM: search optimistically, check only the edges of candidate paths."""
    counter = CollisionCounter() if counter is None else counter
    res = default_resolution(problem.world) if resolution is None else resolution
    t0 = time.perf_counter()
    known: dict[tuple[int, int], bool] = {}

    def optimistic(i, j):
        return known.get((min(i, j), max(i, j)), True)

    iterations = 0
    while True:
        iterations += 1
        path = dijkstra(rgg, optimistic, rgg.init, rgg.goal)
        if path is None:
            return _result(False, None, "graph disconnected after edge removals", counter, t0,
                           iterations=iterations)
        nodes = path.nodes
        blocked = False
        for u, v in zip(nodes[:-1], nodes[1:]):
            key = (min(u, v), max(u, v))
            if key in known:
                continue
            ok = segment_free(problem.world, rgg.nodes[u], rgg.nodes[v], res, counter)
            known[key] = ok
            if not ok:
                blocked = True
                break
        if not blocked:
            return _result(True, path, "", counter, t0, iterations=iterations)


def rrt_star_plan(problem: ProblemInstance, max_samples: int, steer_step: float,
                  rng: np.random.Generator, counter: Optional[CollisionCounter] = None,
                  resolution: Optional[float] = None, goal_bias: float = 0.05) -> PlanResult:
    """RRT* that stops at the first connection into the goal region.

    Rewiring uses radius ``2 * steer_step``.  A new node within
    ``max(steer_step, goal_radius)`` of the goal triggers a connection attempt.
    """
    counter = CollisionCounter() if counter is None else counter
    world = problem.world
    res = default_resolution(world) if resolution is None else resolution
    t0 = time.perf_counter()
    x_init = np.array(problem.x_init)
    x_goal = np.array(problem.x_goal)
    lo, hi = world.state_lower, world.state_upper
    rewire_r = 2.0 * steer_step
    connect_r = max(steer_step, problem.goal_radius)

    cap = max_samples + 2
    pts = np.empty((cap, world.state_dim))
    parent = np.full(cap, -1, dtype=np.int64)
    cost = np.zeros(cap)
    pts[0] = x_init
    size = 1

    def finish(leaf: int, append_goal: bool) -> PlanResult:
        seq = [leaf]
        while parent[seq[-1]] >= 0:
            seq.append(int(parent[seq[-1]]))
        states = pts[seq[::-1]]
        if append_goal:
            states = np.vstack([states, x_goal[None]])
        path = Path(states=np.array(states), cost=path_cost(states))
        return _result(True, path, "", counter, t0, tree_size=size)

    if np.linalg.norm(x_goal - x_init) <= problem.goal_radius:
        return finish(0, False)

    for _ in range(max_samples):
        x_rand = x_goal if rng.random() < goal_bias else rng.uniform(lo, hi)
        d = np.linalg.norm(pts[:size] - x_rand, axis=1)
        near_i = int(np.argmin(d))
        step = x_rand - pts[near_i]
        length = float(d[near_i])
        if length == 0.0:
            continue
        x_new = pts[near_i] + step * min(1.0, steer_step / length)
        if not segment_free(world, pts[near_i], x_new, res, counter):
            continue
        d_new = np.linalg.norm(pts[:size] - x_new, axis=1)
        near = np.nonzero(d_new <= rewire_r)[0]
        best, best_cost = near_i, cost[near_i] + float(d_new[near_i])
        for j in near[np.argsort(cost[near] + d_new[near], kind="stable")]:
            j = int(j)
            c = cost[j] + float(d_new[j])
            if c >= best_cost:
                break
            if segment_free(world, pts[j], x_new, res, counter):
                best, best_cost = j, c
                break
        k = size
        pts[k] = x_new
        parent[k] = best
        cost[k] = best_cost
        size += 1
        for j in near.tolist():
            if j == best:
                continue
            c = best_cost + float(d_new[j])
            if c < cost[j] and segment_free(world, x_new, pts[j], res, counter):
                delta = cost[j] - c
                parent[j] = k
                # propagate the improvement to the subtree
                stack = [j]
                while stack:
                    u = stack.pop()
                    cost[u] -= delta
                    stack.extend(np.nonzero(parent[:size] == u)[0].tolist())
        dg = float(np.linalg.norm(x_goal - x_new))
        if dg <= problem.goal_radius:
            return finish(k, False)
        if dg <= connect_r and segment_free(world, x_new, x_goal, res, counter):
            return finish(k, True)
    return _result(False, None, "sample budget exhausted", counter, t0, tree_size=size)
