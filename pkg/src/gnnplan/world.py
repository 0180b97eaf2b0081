"""Configuration spaces, box obstacles and the instrumented collision oracle.

Two world families are supported:

* ``PointWorld``: the state *is* a point in an axis-aligned box of R^n and
  obstacles are boxes in that same space.
* ``ArmWorld``: a planar k-link revolute arm.  The state is the joint vector,
  obstacles are rectangles in the 2D workspace and a configuration collides
  when any link segment touches any rectangle.  Self-collision is ignored.

All boxes are closed sets, so touching a boundary counts as a collision.
Every query goes through a :class:`CollisionCounter` so planners can be
compared by the number of edge checks they spend.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import InputError

# Bound on the number of (config, link, box) triples evaluated per numpy batch.
_BATCH_ELEMS = 2_000_000


@dataclass(frozen=True)
class BoxObstacle:
    center: tuple[float, ...]
    half_extent: tuple[float, ...]

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        e = tuple(float(v) for v in self.half_extent)
        if len(c) != len(e):
            raise InputError("center and half_extent must have equal dimension")
        if not all(v > 0 for v in e):
            raise InputError("half extents must be strictly positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_extent", e)

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def lower(self) -> np.ndarray:
        return np.subtract(self.center, self.half_extent)

    @property
    def upper(self) -> np.ndarray:
        return np.add(self.center, self.half_extent)


def _box_arrays(obstacles: Sequence[BoxObstacle], dim: int) -> tuple[np.ndarray, np.ndarray]:
    if not obstacles:
        return np.zeros((0, dim)), np.zeros((0, dim))
    lo = np.array([o.lower for o in obstacles], dtype=float)
    hi = np.array([o.upper for o in obstacles], dtype=float)
    return lo, hi


@dataclass(frozen=True, eq=False)
class PointWorld:
    dim: int
    bounds: tuple[tuple[float, ...], tuple[float, ...]]
    obstacles: tuple[BoxObstacle, ...] = ()
    _lo: np.ndarray = field(init=False, repr=False)
    _hi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        lower = tuple(float(v) for v in self.bounds[0])
        upper = tuple(float(v) for v in self.bounds[1])
        if self.dim < 1 or len(lower) != self.dim or len(upper) != self.dim:
            raise InputError("bounds must have one entry per dimension")
        if not all(a < b for a, b in zip(lower, upper)):
            raise InputError("state-space bounds must satisfy lower < upper")
        obstacles = tuple(self.obstacles)
        if any(o.dim != self.dim for o in obstacles):
            raise InputError("obstacle dimension must equal world dimension")
        object.__setattr__(self, "bounds", (lower, upper))
        object.__setattr__(self, "obstacles", obstacles)
        lo, hi = _box_arrays(obstacles, self.dim)
        object.__setattr__(self, "_lo", lo)
        object.__setattr__(self, "_hi", hi)

    def __eq__(self, other):
        if not isinstance(other, PointWorld):
            return NotImplemented
        return (self.dim, self.bounds, self.obstacles) == (other.dim, other.bounds, other.obstacles)

    def __hash__(self):
        return hash((self.dim, self.bounds, self.obstacles))

    @property
    def state_dim(self) -> int:
        return self.dim

    @property
    def state_lower(self) -> np.ndarray:
        return np.array(self.bounds[0])

    @property
    def state_upper(self) -> np.ndarray:
        return np.array(self.bounds[1])

    @property
    def workspace_lower(self) -> np.ndarray:
        return self.state_lower

    @property
    def workspace_upper(self) -> np.ndarray:
        return self.state_upper

    def with_obstacles(self, obstacles: Sequence[BoxObstacle]) -> "PointWorld":
        return PointWorld(self.dim, self.bounds, tuple(obstacles))


@dataclass(frozen=True, eq=False)
class ArmWorld:
    link_lengths: tuple[float, ...]
    joint_limits: tuple[tuple[float, float], ...]
    base: tuple[float, float] = (0.0, 0.0)
    obstacles: tuple[BoxObstacle, ...] = ()
    _lo: np.ndarray = field(init=False, repr=False)
    _hi: np.ndarray = field(init=False, repr=False)
    _links: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        links = tuple(float(v) for v in self.link_lengths)
        limits = tuple((float(a), float(b)) for a, b in self.joint_limits)
        base = tuple(float(v) for v in self.base)
        if not links or not all(v > 0 for v in links):
            raise InputError("link lengths must be positive")
        if len(limits) != len(links):
            raise InputError("one joint interval per link is required")
        if not all(a < b for a, b in limits):
            raise InputError("joint intervals must be nonempty")
        if len(base) != 2:
            raise InputError("arm base must be a 2D point")
        obstacles = tuple(self.obstacles)
        if any(o.dim != 2 for o in obstacles):
            raise InputError("arm obstacles must be 2D")
        object.__setattr__(self, "link_lengths", links)
        object.__setattr__(self, "joint_limits", limits)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "obstacles", obstacles)
        lo, hi = _box_arrays(obstacles, 2)
        object.__setattr__(self, "_lo", lo)
        object.__setattr__(self, "_hi", hi)
        object.__setattr__(self, "_links", np.array(links))

    def __eq__(self, other):
        if not isinstance(other, ArmWorld):
            return NotImplemented
        return (self.link_lengths, self.joint_limits, self.base, self.obstacles) == (
            other.link_lengths, other.joint_limits, other.base, other.obstacles)

    def __hash__(self):
        return hash((self.link_lengths, self.joint_limits, self.base, self.obstacles))

    @property
    def dof(self) -> int:
        return len(self.link_lengths)

    @property
    def state_dim(self) -> int:
        return self.dof

    @property
    def state_lower(self) -> np.ndarray:
        return np.array([a for a, _ in self.joint_limits])

    @property
    def state_upper(self) -> np.ndarray:
        return np.array([b for _, b in self.joint_limits])

    @property
    def reach(self) -> float:
        return float(sum(self.link_lengths))

    @property
    def workspace_lower(self) -> np.ndarray:
        return np.array(self.base) - self.reach

    @property
    def workspace_upper(self) -> np.ndarray:
        return np.array(self.base) + self.reach

    def with_obstacles(self, obstacles: Sequence[BoxObstacle]) -> "ArmWorld":
        return ArmWorld(self.link_lengths, self.joint_limits, self.base, tuple(obstacles))


WorldModel = Union[PointWorld, ArmWorld]


@dataclass(frozen=True)
class ProblemInstance:
    world: WorldModel
    x_init: tuple[float, ...]
    x_goal: tuple[float, ...]
    goal_radius: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x_init", tuple(float(v) for v in self.x_init))
        object.__setattr__(self, "x_goal", tuple(float(v) for v in self.x_goal))
        if self.goal_radius < 0:
            raise InputError("goal_radius must be nonnegative")
        n = self.world.state_dim
        if len(self.x_init) != n or len(self.x_goal) != n:
            raise InputError("init/goal dimension does not match the world")

    def validate(self) -> None:
        """Raise :class:`InputError` when init or goal is in collision."""
        scratch = CollisionCounter()
        if point_in_collision(self.world, self.x_init, scratch):
            raise InputError("x_init is in collision")
        if point_in_collision(self.world, self.x_goal, scratch):
            raise InputError("x_goal is in collision")


@dataclass
class CollisionCounter:
    edge_checks: int = 0
    point_checks: int = 0


def reset_counter(counter: CollisionCounter) -> None:
    counter.edge_checks = 0
    counter.point_checks = 0


def read_counter(counter: CollisionCounter) -> tuple[int, int]:
    return counter.edge_checks, counter.point_checks


def state_diagonal(world: WorldModel) -> float:
    return float(np.linalg.norm(world.state_upper - world.state_lower))


def default_resolution(world: WorldModel) -> float:
    return 0.01 * state_diagonal(world)


def _as_states(world: WorldModel, x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != world.state_dim:
        raise InputError(f"state dimension {arr.shape[-1]} does not match world dimension {world.state_dim}")
    return arr


def fk_joints(world: ArmWorld, q) -> np.ndarray:
    """Joint positions for a batch of configurations, shape ``(K, k+1, 2)``."""
    q = _as_states(world, q)
    theta = np.cumsum(q, axis=1)
    steps = np.stack([np.cos(theta), np.sin(theta)], axis=-1) * world._links[None, :, None]
    joints = np.empty((q.shape[0], world.dof + 1, 2))
    joints[:, 0, :] = world.base
    joints[:, 1:, :] = np.asarray(world.base) + np.cumsum(steps, axis=1)
    return joints


def fk_links(world: ArmWorld, q) -> list[tuple[np.ndarray, np.ndarray]]:
    """Link segments of one configuration as ``(start, end)`` pairs."""
    q = np.asarray(q, dtype=float)
    if q.ndim != 1 or q.shape[0] != world.dof:
        raise InputError(f"expected {world.dof} joint values, got shape {q.shape}")
    joints = fk_joints(world, q)[0]
    return [(joints[i].copy(), joints[i + 1].copy()) for i in range(world.dof)]


def segments_hit_boxes(p0: np.ndarray, p1: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Closed segment vs closed axis-aligned box test (slab method).

    ``p0``/``p1`` have shape ``(S, w)`` and ``lo``/``hi`` shape ``(B, w)``.
    Returns an ``(S, B)`` boolean matrix.
    """
    d = (p1 - p0)[:, None, :]
    a = p0[:, None, :]
    parallel = d == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo[None] - a) / d
        t2 = (hi[None] - a) / d
    tnear = np.where(parallel, -np.inf, np.minimum(t1, t2))
    tfar = np.where(parallel, np.inf, np.maximum(t1, t2))
    inside_slab = ~parallel | ((a >= lo[None]) & (a <= hi[None]))
    t_enter = np.maximum(tnear.max(axis=2), 0.0)
    t_exit = np.minimum(tfar.min(axis=2), 1.0)
    return inside_slab.all(axis=2) & (t_enter <= t_exit)


def states_in_collision(world: WorldModel, states) -> np.ndarray:
    """Uncounted batch collision test; returns one boolean per state."""
    states = _as_states(world, states)
    n_boxes = world._lo.shape[0]
    out = np.zeros(states.shape[0], dtype=bool)
    if n_boxes == 0:
        return out
    if isinstance(world, PointWorld):
        per = max(1, _BATCH_ELEMS // (n_boxes * world.dim))
        for s in range(0, states.shape[0], per):
            x = states[s:s + per, None, :]
            inside = ((x >= world._lo[None]) & (x <= world._hi[None])).all(axis=2)
            out[s:s + per] = inside.any(axis=1)
        return out
    k = world.dof
    per = max(1, _BATCH_ELEMS // (n_boxes * k * 2))
    for s in range(0, states.shape[0], per):
        joints = fk_joints(world, states[s:s + per])
        p0 = joints[:, :-1, :].reshape(-1, 2)
        p1 = joints[:, 1:, :].reshape(-1, 2)
        hit = segments_hit_boxes(p0, p1, world._lo, world._hi)
        out[s:s + per] = hit.reshape(-1, k * n_boxes).any(axis=1)
    return out


def point_in_collision(world: WorldModel, x, counter: CollisionCounter) -> bool:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != world.state_dim:
        raise InputError(f"state dimension {x.shape} does not match world dimension {world.state_dim}")
    counter.point_checks += 1
    return bool(states_in_collision(world, x)[0])


def _interpolation_counts(a: np.ndarray, b: np.ndarray, resolution: float) -> np.ndarray:
    dist = np.linalg.norm(b - a, axis=1)
    return np.ceil(dist / resolution).astype(np.int64) + 1


def _canonical(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Interpolate from the lexicographically smaller endpoint so that
    # segment_free(a, b) and segment_free(b, a) sample identical states.
    swap = np.zeros(a.shape[0], dtype=bool)
    undecided = np.ones(a.shape[0], dtype=bool)
    for col in range(a.shape[1]):
        gt = undecided & (a[:, col] > b[:, col])
        lt = undecided & (a[:, col] < b[:, col])
        swap |= gt
        undecided &= ~(gt | lt)
    a2 = np.where(swap[:, None], b, a)
    b2 = np.where(swap[:, None], a, b)
    return a2, b2


def edges_free(world: WorldModel, starts, ends, resolution: float,
               counter: CollisionCounter) -> np.ndarray:
    """Batched :func:`segment_free`; charges one edge check per segment."""
    if not resolution > 0:
        raise InputError("resolution must be positive")
    a = _as_states(world, starts)
    b = _as_states(world, ends)
    if a.shape != b.shape:
        raise InputError("start and end batches differ in shape")
    m = a.shape[0]
    counter.edge_checks += m
    if m == 0:
        return np.ones(0, dtype=bool)
    a, b = _canonical(a, b)
    counts = _interpolation_counts(a, b, resolution)
    counter.point_checks += int(counts.sum())
    result = np.ones(m, dtype=bool)
    if world._lo.shape[0] == 0:
        return result
    # Chunk edges so the interpolated batch stays bounded.
    budget = 200_000
    cum = np.cumsum(counts)
    start = 0
    while start < m:
        base = cum[start - 1] if start else 0
        stop = max(start + 1, int(np.searchsorted(cum, base + budget, side="right")))
        c = counts[start:stop]
        total = int(c.sum())
        owner = np.repeat(np.arange(stop - start), c)
        offsets = np.arange(total) - np.repeat(np.cumsum(c) - c, c)
        denom = np.maximum(c - 1, 1)[owner]
        t = (offsets / denom)[:, None]
        pts = a[start:stop][owner] + t * (b[start:stop][owner] - a[start:stop][owner])
        hits = states_in_collision(world, pts)
        bad = np.zeros(stop - start, dtype=bool)
        np.logical_or.at(bad, owner, hits)
        result[start:stop] = ~bad
        start = stop
    return result


def segment_free(world: WorldModel, a, b, resolution: float, counter: CollisionCounter) -> bool:
    """True when every interpolated state on the straight segment a-b is free.

    ``ceil(D(a, b) / resolution) + 1`` evenly spaced states are tested,
    endpoints included.  Costs one edge check regardless of density.
    """
    return bool(edges_free(world, np.asarray(a, dtype=float)[None, :],
                           np.asarray(b, dtype=float)[None, :], resolution, counter)[0])


def occupancy_grid(world: WorldModel, m: int) -> np.ndarray:
    """Binary occupancy grid with ``m`` cells per axis over the workspace box.

    A cell is marked when its region and an obstacle overlap with positive
    measure.
    """
    if m < 2:
        raise InputError("grid resolution must be at least 2")
    lower = world.workspace_lower
    upper = world.workspace_upper
    w = lower.shape[0]
    edges = [np.linspace(lower[k], upper[k], m + 1) for k in range(w)]
    grid = np.zeros((m,) * w, dtype=np.uint8)
    for obs in world.obstacles:
        lo, hi = obs.lower, obs.upper
        masks = [(edges[k][:-1] < hi[k]) & (edges[k][1:] > lo[k]) for k in range(w)]
        cell = masks[0]
        for k in range(1, w):
            cell = np.multiply.outer(cell, masks[k])
        grid |= cell.astype(np.uint8)
    return grid


# --- world description files ---------------------------------------------

def world_to_dict(world: WorldModel) -> dict:
    obstacles = [[list(o.center), list(o.half_extent)] for o in world.obstacles]
    if isinstance(world, PointWorld):
        return {"type": "point", "dim": world.dim,
                "bounds": [list(world.bounds[0]), list(world.bounds[1])],
                "obstacles": obstacles}
    return {"type": "arm", "links": list(world.link_lengths),
            "joint_limits": [list(j) for j in world.joint_limits],
            "base": list(world.base), "obstacles": obstacles}


def world_from_dict(data: dict) -> WorldModel:
    try:
        kind = data["type"]
        obstacles = tuple(BoxObstacle(tuple(c), tuple(e)) for c, e in data.get("obstacles", []))
        if kind == "point":
            return PointWorld(int(data["dim"]), (tuple(data["bounds"][0]), tuple(data["bounds"][1])),
                              obstacles)
        if kind == "arm":
            return ArmWorld(tuple(data["links"]), tuple(tuple(j) for j in data["joint_limits"]),
                            tuple(data.get("base", (0.0, 0.0))), obstacles)
    except (KeyError, TypeError, IndexError) as exc:
        raise InputError(f"malformed world description: {exc!r}") from exc
    raise InputError(f"unknown world type {kind!r}")


def dumps_world(world: WorldModel) -> str:
    return json.dumps(world_to_dict(world), sort_keys=True)


def loads_world(text: str) -> WorldModel:
    return world_from_dict(json.loads(text))


def save_world(world: WorldModel, path: Union[str, Path]) -> None:
    Path(path).write_text(dumps_world(world) + "\n")


def load_world(path: Union[str, Path]) -> WorldModel:
    return loads_world(Path(path).read_text())


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)
