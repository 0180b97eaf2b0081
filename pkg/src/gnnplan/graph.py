"""r-disc random geometric graphs over collision-free samples."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import ClutteredError, InputError
from .world import (ProblemInstance, WorldModel, states_in_collision,
                    unit_ball_volume)


@dataclass(frozen=True, eq=False)
class Rgg:
    """Sampled states plus undirected r-disc edges.

    ``nodes[init]`` is the start state and ``nodes[goal]`` the goal state;
    :func:`build_rgg` always puts them at indices 0 and 1.
    """

    nodes: np.ndarray
    edges: tuple[tuple[int, int], ...]
    radius: float
    init: int = 0
    goal: int = 1
    adjacency: tuple[tuple[int, ...], ...] = field(init=False, repr=False)
    _lengths: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 2:
            raise InputError("nodes must be a 2D array")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        edges = tuple(sorted((min(int(i), int(j)), max(int(i), int(j))) for i, j in self.edges))
        n = nodes.shape[0]
        adj: list[list[int]] = [[] for _ in range(n)]
        for i, j in edges:
            if i == j or not (0 <= i < n and 0 <= j < n):
                raise InputError(f"invalid edge ({i}, {j})")
            adj[i].append(j)
            adj[j].append(i)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "adjacency", tuple(tuple(sorted(a)) for a in adj))

    def __eq__(self, other):
        if not isinstance(other, Rgg):
            return NotImplemented
        return (self.edges == other.edges and self.radius == other.radius
                and (self.init, self.goal) == (other.init, other.goal)
                and self.nodes.shape == other.nodes.shape
                and bool(np.array_equal(self.nodes, other.nodes)))

    __hash__ = None

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def edge_length(self, i: int, j: int) -> float:
        """Euclidean length; edges read one shared table so every consumer agrees bit for bit."""
        key = (i, j) if i < j else (j, i)
        if not self._lengths and self.edges:
            pairs = np.array(self.edges)
            lengths = np.linalg.norm(self.nodes[pairs[:, 1]] - self.nodes[pairs[:, 0]], axis=1)
            self._lengths.update(zip(self.edges, lengths.tolist()))
        length = self._lengths.get(key)
        if length is None:
            return float(np.linalg.norm(self.nodes[key[1]] - self.nodes[key[0]]))
        return length


def neighbors(rgg: Rgg, i: int) -> list[int]:
    if not 0 <= i < rgg.n_nodes:
        raise InputError(f"node index {i} out of range")
    return list(rgg.adjacency[i])


def sample_free(world: WorldModel, n: int, rng: np.random.Generator,
                max_attempts: Optional[int] = None) -> np.ndarray:
    """Rejection-sample ``n`` states uniformly from the free space.

    Raises :class:`ClutteredError` once ``max_attempts`` (default ``1000 * n``)
    candidates have been drawn without collecting ``n`` free ones.
    """
    if n < 0:
        raise InputError("sample count must be nonnegative")
    lo, hi = world.state_lower, world.state_upper
    budget = 1000 * n if max_attempts is None else max_attempts
    out = np.empty((n, world.state_dim))
    got = drawn = 0
    while got < n:
        if drawn >= budget:
            raise ClutteredError(f"only {got} of {n} free samples after {drawn} attempts")
        batch = min(max(2 * (n - got), 64), budget - drawn)
        cand = rng.uniform(lo, hi, size=(batch, world.state_dim))
        drawn += batch
        free = cand[~states_in_collision(world, cand)]
        take = free[: n - got]
        out[got:got + take.shape[0]] = take
        got += take.shape[0]
    return out


def connect_rdisc(nodes, radius: float) -> list[tuple[int, int]]:
    """All index pairs at Euclidean distance <= radius, sorted."""
    pts = np.asarray(nodes, dtype=float)
    n = pts.shape[0]
    if n < 2 or radius < 0:
        return []
    out: list[np.ndarray] = []
    block = max(1, 4_000_000 // max(n, 1))
    for s in range(0, n, block):
        chunk = pts[s:s + block]
        d2 = ((chunk[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        ii, jj = np.nonzero(np.sqrt(d2) <= radius)
        ii = ii + s
        keep = ii < jj
        out.append(np.stack([ii[keep], jj[keep]], axis=1))
    pairs = np.concatenate(out) if out else np.zeros((0, 2), dtype=int)
    return [(int(i), int(j)) for i, j in pairs]


def free_fraction(world: WorldModel, rng: np.random.Generator, samples: int = 2000) -> float:
    cand = rng.uniform(world.state_lower, world.state_upper, size=(samples, world.state_dim))
    return float(np.mean(~states_in_collision(world, cand)))


def default_radius(world: WorldModel, n: int, rng: np.random.Generator, *,
                   target_degree: float = 10.0, factor: float = 1.5) -> float:
    """Connection radius for an r-disc graph over ``n`` free samples.

    Chooses the radius whose expected degree is ``target_degree`` given a
    Monte-Carlo estimate of the free volume, then scales it by ``factor``.
    """
    d = world.state_dim
    volume = float(np.prod(world.state_upper - world.state_lower))
    v_free = volume * max(free_fraction(world, rng), 1e-3)
    r = (target_degree * v_free / (max(n, 1) * unit_ball_volume(d))) ** (1.0 / d)
    return factor * r


def build_rgg(problem: ProblemInstance, n: int, radius: float, rng: np.random.Generator) -> Rgg:
    """Insert init and goal, sample ``n`` free states, connect by r-disc.

    Edges are not collision-checked here; validating them is the planner's job.
    """
    samples = sample_free(problem.world, n, rng)
    nodes = np.vstack([np.array(problem.x_init)[None], np.array(problem.x_goal)[None], samples])
    return Rgg(nodes, tuple(connect_rdisc(nodes, radius)), float(radius), 0, 1)


def rgg_to_dict(rgg: Rgg) -> dict:
    return {"n": rgg.n_nodes, "dim": int(rgg.nodes.shape[1]),
            "coords": [float(v) for v in rgg.nodes.ravel()],
            "edges": [list(e) for e in rgg.edges], "radius": rgg.radius,
            "init": rgg.init, "goal": rgg.goal}


def rgg_from_dict(data: dict) -> Rgg:
    try:
        n, dim = int(data["n"]), int(data["dim"])
        nodes = np.array(data["coords"], dtype=float).reshape(n, dim)
        return Rgg(nodes, tuple(tuple(e) for e in data["edges"]), float(data["radius"]),
                   int(data.get("init", 0)), int(data.get("goal", 1)))
    except (KeyError, ValueError, TypeError) as exc:
        raise InputError(f"malformed graph description: {exc!r}") from exc


def save_rgg(rgg: Rgg, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(rgg_to_dict(rgg), sort_keys=True) + "\n")


def load_rgg(path: Union[str, Path]) -> Rgg:
    return rgg_from_dict(json.loads(Path(path).read_text()))
