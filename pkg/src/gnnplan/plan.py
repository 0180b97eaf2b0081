"""Guided greedy search over a roadmap.

At the current vertex the guide scores every neighbour; unvisited neighbours
are collision-checked best-first and the walk moves to the first free one.
When none is free the walk backtracks one vertex (the dead end stays
visited).  Edge results are cached per trial, so no edge is checked twice.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path as FsPath
from typing import Generator, Iterator, Optional, Protocol, Sequence, Union

import numpy as np

from .baselines import PlanResult, graph_path
from .graph import Rgg
from .guidance import GuidanceRow
from .world import (CollisionCounter, PointWorld, ProblemInstance, default_resolution,
                    read_counter, segment_free)


class Session(Protocol):
    def row(self, path: Sequence[int]) -> GuidanceRow: ...


class Guide(Protocol):
    def open_session(self, problem: ProblemInstance, rgg: Rgg) -> Session: ...


@dataclass(frozen=True)
class TraceStep:
    vertex: int
    ranked: tuple[tuple[int, float], ...]
    chosen: Optional[int]
    checks: int


def _in_goal(problem: ProblemInstance, rgg: Rgg, v: int) -> bool:
    if v == rgg.goal:
        return True
    if problem.goal_radius <= 0:
        return False
    return float(np.linalg.norm(rgg.nodes[v] - np.asarray(problem.x_goal))) <= problem.goal_radius


def _walk(model: Guide, problem: ProblemInstance, rgg: Rgg, counter: CollisionCounter,
          step_budget: Optional[int], resolution: Optional[float]
          ) -> Generator[TraceStep, None, PlanResult]:
    t0 = time.perf_counter()
    res = default_resolution(problem.world) if resolution is None else resolution
    budget = 10 * rgg.n_nodes if step_budget is None else step_budget
    if budget < 1:
        raise ValueError("step_budget must be at least 1")
    session = model.open_session(problem, rgg)
    stack = [rgg.init]
    visited = {rgg.init}
    known: dict[tuple[int, int], bool] = {}
    checked: list[tuple[int, int, bool]] = []
    steps = 0

    def finish(success: bool, reason: str) -> PlanResult:
        e, p = read_counter(counter)
        path = graph_path(rgg, stack) if success else None
        return PlanResult(success=success, path=path, reason=reason, edge_checks=e,
                          point_checks=p, plan_time=time.perf_counter() - t0,
                          extras={"steps": steps, "checked": checked})

    if _in_goal(problem, rgg, rgg.init):
        return finish(True, "")
    while stack:
        if steps >= budget:
            return finish(False, "step budget exhausted")
        steps += 1
        v = stack[-1]
        ranked = session.row(stack).ranked(exclude=visited)
        chosen = None
        used = 0
        for j, _ in ranked:
            key = (v, j) if v < j else (j, v)
            ok = known.get(key)
            if ok is None:
                ok = segment_free(problem.world, rgg.nodes[v], rgg.nodes[j], res, counter)
                known[key] = ok
                checked.append((key[0], key[1], ok))
                used += 1
            if ok:
                chosen = j
                break
        yield TraceStep(v, tuple(ranked), chosen, used)
        if chosen is None:
            stack.pop()
            continue
        stack.append(chosen)
        visited.add(chosen)
        if _in_goal(problem, rgg, chosen):
            return finish(True, "")
    return finish(False, "search stack empty")


def step_trace(model: Guide, problem: ProblemInstance, rgg: Rgg,
               counter: Optional[CollisionCounter] = None, step_budget: Optional[int] = None,
               resolution: Optional[float] = None) -> Iterator[TraceStep]:
    """Yield each decision :func:`gnn_plan` makes, in order."""
    counter = CollisionCounter() if counter is None else counter
    yield from _walk(model, problem, rgg, counter, step_budget, resolution)


def gnn_plan(model: Guide, problem: ProblemInstance, rgg: Rgg, step_budget: Optional[int] = None,
             counter: Optional[CollisionCounter] = None,
             resolution: Optional[float] = None) -> PlanResult:
    """Greedy guided search; ``step_budget`` defaults to ``10 * |nodes|``."""
    counter = CollisionCounter() if counter is None else counter
    walker = _walk(model, problem, rgg, counter, step_budget, resolution)
    while True:
        try:
            next(walker)
        except StopIteration as stop:
            return stop.value


def replay_trace(problem: ProblemInstance, rgg: Rgg, steps: Sequence[TraceStep]) -> tuple[bool, list[int], int]:
    """Rebuild (success, path, edge checks) from a trace without the guide."""
    stack = [rgg.init]
    checks = 0
    success = _in_goal(problem, rgg, rgg.init)
    for s in steps:
        checks += s.checks
        if s.chosen is None:
            stack.pop()
        else:
            stack.append(s.chosen)
            success = _in_goal(problem, rgg, s.chosen)
    return success, stack, checks


# --- SVG rendering ------------------------------------------------------------------

def render_svg(problem: ProblemInstance, rgg: Rgg, result: Optional[PlanResult] = None,
               size: int = 480) -> str:
    """SVG of a 2D point world.

    Layers, bottom to top: obstacles (grey), roadmap edges (light),
    checked edges (medium; red when blocked), final path (heavy blue),
    start (green) and goal (orange) markers.
    """
    world = problem.world
    if not isinstance(world, PointWorld) or world.dim != 2:
        raise ValueError("SVG rendering supports 2D point worlds only")
    lo, hi = world.state_lower, world.state_upper
    scale = size / float(max(hi - lo))

    def xy(p):
        return (float(p[0] - lo[0]) * scale, float(hi[1] - p[1]) * scale)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">',
           f'<rect x="0" y="0" width="{size}" height="{size}" fill="white" stroke="black"/>']
    for o in world.obstacles:
        x0, y1 = xy(o.lower)
        x1, y0 = xy(o.upper)
        out.append(f'<rect x="{x0:.2f}" y="{y0:.2f}" width="{x1 - x0:.2f}" height="{y1 - y0:.2f}" fill="#888"/>')
    for i, j in rgg.edges:
        (a, b), (c, d) = xy(rgg.nodes[i]), xy(rgg.nodes[j])
        out.append(f'<line x1="{a:.2f}" y1="{b:.2f}" x2="{c:.2f}" y2="{d:.2f}" stroke="#ddd" stroke-width="0.5"/>')
    if result is not None:
        for i, j, ok in result.extras.get("checked", []):
            (a, b), (c, d) = xy(rgg.nodes[i]), xy(rgg.nodes[j])
            colour = "#6a6" if ok else "#d44"
            out.append(f'<line x1="{a:.2f}" y1="{b:.2f}" x2="{c:.2f}" y2="{d:.2f}" stroke="{colour}" stroke-width="1.2"/>')
        if result.success and result.path is not None:
            pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in (xy(s) for s in result.path.states))
            out.append(f'<polyline points="{pts}" fill="none" stroke="#14c" stroke-width="3"/>')
    for idx, colour in ((rgg.init, "#1a1"), (rgg.goal, "#f80")):
        x, y = xy(rgg.nodes[idx])
        out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="5" fill="{colour}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def save_svg(text: str, path: Union[str, FsPath]) -> None:
    FsPath(path).write_text(text)
