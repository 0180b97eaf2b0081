"""Guidance model: scores every neighbour edge of the current vertex.

Pipeline for one query (world, roadmap, occupancy grid, visited path, vertex):

1. environment encoder
   * obstacle vector ``y``: two strided conv layers over the grid, flatten, dense;
   * node embeddings ``x = GCN(GAT(h))`` with ``h_i = [x_i, x_goal]``;
   * ``O_i = LayerNorm(MLP([x_i || y]))``.
2. path encoder: Elman RNN over the visited states, ``P``.
3. fusion: every node attends over all node keys plus one extra slot whose
   key score is ``Q_p . K_e[i]`` and whose value is ``V_p``; the result is
   added to ``O`` and layer-normalised.
4. decoder: per neighbour ``j`` of the vertex ``v`` the edge feature
   ``[F_v || s_v - s_j || F_j]`` goes through a two-layer MLP and a two-layer
   scorer, giving the guidance value.

States are affinely mapped to ``[-1, 1]`` by the world's state bounds and
zero-padded to ``config.state_width`` so one model serves worlds of
different dimension.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import tensor as T
from .errors import InputError
from .graph import Rgg
from .tensor import ParamSet, Tensor, no_grad
from .world import ProblemInstance, WorldModel, occupancy_grid


@dataclass(frozen=True)
class GuidanceConfig:
    state_width: int = 7
    d: int = 32
    d_o: int = 32
    hidden: int = 32
    m: int = 16
    workspace_dim: int = 2
    conv_channels: tuple[int, int] = (4, 8)
    kernel: int = 3
    stride: int = 2
    slope: float = 0.2
    # Init scales chosen so plain SGD at lr 1e-3 makes progress: neighbouring
    # nodes differ by a few percent of the embedding norm, so the layer-norm
    # gains start above 1 and the GAT input weights above Glorot.
    norm_gain: float = 2.0
    gat_gain: float = 2.0
    # Start the GAT goal block as the negated state block, so first-layer
    # features begin as functions of the offset x_i - x_goal.
    goal_offset_init: bool = True
    # Initial effective conv bias.  Empty grid cells see only the bias, so a
    # zero bias parks most of them on the ReLU kink.
    conv_bias: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        if min(self.state_width, self.d, self.d_o, self.hidden) < 1:
            raise InputError("model dimensions must be positive")
        if self.d_o < 2:
            raise InputError("d_o must be at least 2 for layer normalisation")
        if self.conv_out_side() < 1:
            raise InputError(f"grid size {self.m} too small for two conv layers")

    def conv_sides(self) -> list[int]:
        """Output side length of each conv layer."""
        sides, side = [], self.m
        for _ in self.conv_channels:
            side = (side + T.cover_pad(side, self.kernel, self.stride) - self.kernel) // self.stride + 1
            sides.append(side)
        return sides

    def conv_out_side(self) -> int:
        return self.conv_sides()[-1]

    def obstacle_flat(self) -> int:
        return self.conv_channels[-1] * self.conv_out_side() ** self.workspace_dim

    @classmethod
    def from_dict(cls, data: dict) -> "GuidanceConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise InputError(f"unknown model config keys {sorted(extra)}")
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["conv_channels"] = list(self.conv_channels)
        return out


@dataclass(frozen=True)
class GuidanceRow:
    vertex: int
    neighbors: tuple[int, ...]
    values: tuple[float, ...]

    @property
    def entries(self) -> dict[int, float]:
        return dict(zip(self.neighbors, self.values))

    def ranked(self, exclude=()) -> list[tuple[int, float]]:
        """Neighbours by value descending, ties by ascending index."""
        skip = set(exclude)
        pairs = [(j, w) for j, w in zip(self.neighbors, self.values) if j not in skip]
        return sorted(pairs, key=lambda p: (-p[1], p[0]))


@dataclass(frozen=True)
class GuidanceMatrix:
    rows: tuple[GuidanceRow, ...]

    def __getitem__(self, v: int) -> GuidanceRow:
        return self.rows[v]

    def __len__(self):
        return len(self.rows)


@dataclass(frozen=True, eq=False)
class Scene:
    """Network-ready view of one (world, roadmap, grid) triple."""

    states: np.ndarray
    features: np.ndarray
    edges: T.EdgeIndex
    adjacency: tuple[tuple[int, ...], ...]
    grid: np.ndarray
    goal: int


def normalize_states(world: WorldModel, states, width: Optional[int] = None) -> np.ndarray:
    lo, hi = world.state_lower, world.state_upper
    x = np.atleast_2d(np.asarray(states, dtype=float))
    z = 2.0 * (x - lo) / (hi - lo) - 1.0
    width = z.shape[1] if width is None else width
    if z.shape[1] > width:
        raise InputError(f"state dimension {z.shape[1]} exceeds model width {width}")
    if z.shape[1] < width:
        z = np.hstack([z, np.zeros((z.shape[0], width - z.shape[1]))])
    return z


def node_features(world: WorldModel, rgg: Rgg, x_goal=None, width: Optional[int] = None) -> np.ndarray:
    """Rows ``[x_i, x_goal]`` in normalised (and padded) coordinates."""
    if rgg.n_nodes == 0:
        raise InputError("empty roadmap")
    goal = rgg.nodes[rgg.goal] if x_goal is None else np.asarray(x_goal, dtype=float)
    s = normalize_states(world, rgg.nodes, width)
    g = normalize_states(world, goal[None, :], width)
    return np.hstack([s, np.repeat(g, s.shape[0], axis=0)])


def prepare_scene(config: GuidanceConfig, world: WorldModel, rgg: Rgg,
                  grid: Optional[np.ndarray] = None) -> Scene:
    if grid is None:
        grid = occupancy_grid(world, config.m)
    grid = np.asarray(grid, dtype=float)
    if grid.shape != (config.m,) * config.workspace_dim:
        raise InputError(f"grid shape {grid.shape} does not match model ({config.m}^{config.workspace_dim})")
    return Scene(states=normalize_states(world, rgg.nodes, config.state_width),
                 features=node_features(world, rgg, None, config.state_width),
                 edges=T.edge_index(rgg.adjacency, rgg.n_nodes),
                 adjacency=rgg.adjacency, grid=grid, goal=rgg.goal)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(config: GuidanceConfig, rng: np.random.Generator) -> ParamSet:
    c = config
    s, d, do, h, k, w = c.state_width, c.d, c.d_o, c.hidden, c.kernel, c.workspace_dim
    p = ParamSet()
    c_in = 1
    cells = [side ** w for side in c.conv_sides()]
    for i, c_out in enumerate(c.conv_channels, start=1):
        shape = (c_out, c_in) + (k,) * w
        p.add(f"env.conv{i}.W", _glorot(rng, c_in * k ** w, c_out * k ** w, shape))
        p.add(f"env.conv{i}.b", np.full(c_out, c.conv_bias * cells[i - 1]))
        c_in = c_out
    p.add("env.obs.W", _glorot(rng, c.obstacle_flat(), d, (c.obstacle_flat(), d)))
    p.add("env.obs.b", np.zeros(d))
    gat_w = c.gat_gain * _glorot(rng, 2 * s, d, (2 * s, d))
    if c.goal_offset_init:
        gat_w[s:] = -gat_w[:s]
    p.add("env.gat.W", gat_w)
    p.add("env.gat.a", _glorot(rng, 2 * d, 1, (2 * d,)))
    p.add("env.gcn.W", _glorot(rng, d, d, (d, d)))
    p.add("env.mlp.W1", _glorot(rng, 2 * d, do, (2 * d, do)))
    p.add("env.mlp.b1", np.zeros(do))
    p.add("env.mlp.W2", _glorot(rng, do, do, (do, do)))
    p.add("env.mlp.b2", np.zeros(do))
    p.add("env.norm.gain", np.full(do, c.norm_gain))
    p.add("env.norm.bias", np.zeros(do))
    p.add("path.rnn.Wx", _glorot(rng, s, h, (s, h)))
    p.add("path.rnn.Wh", _glorot(rng, h, h, (h, h)))
    p.add("path.rnn.b", np.zeros(h))
    for name in ("Qe", "Ke", "Ve"):
        p.add(f"fuse.{name}", _glorot(rng, do, do, (do, do)))
    for name in ("Qp", "Vp"):
        p.add(f"fuse.{name}", _glorot(rng, h, do, (h, do)))
    p.add("fuse.norm.gain", np.full(do, c.norm_gain))
    p.add("fuse.norm.bias", np.zeros(do))
    p.add("dec.hx.W1", _glorot(rng, 2 * do + s, d, (2 * do + s, d)))
    p.add("dec.hx.b1", np.zeros(d))
    p.add("dec.hx.W2", _glorot(rng, d, d, (d, d)))
    p.add("dec.hx.b2", np.zeros(d))
    p.add("dec.score.W1", _glorot(rng, d, d, (d, d)))
    p.add("dec.score.b1", np.zeros(d))
    p.add("dec.score.W2", _glorot(rng, d, 1, (d, 1)))
    p.add("dec.score.b2", np.zeros(1))
    return p


class GuidanceModel:
    """Configuration plus parameters; all forward methods are pure."""

    def __init__(self, config: GuidanceConfig, params: ParamSet):
        self.config = config
        self.params = params
        expected = init_params(config, np.random.default_rng(0))
        for name, t in expected.items():
            if name not in params or params[name].shape != t.shape:
                raise InputError(f"parameter {name} missing or misshaped for this config")

    @classmethod
    def initialize(cls, config: Optional[GuidanceConfig] = None, seed: int = 0) -> "GuidanceModel":
        config = config or GuidanceConfig()
        return cls(config, init_params(config, np.random.default_rng(seed)))

    def save(self, path: Union[str, Path], meta: Optional[dict] = None) -> None:
        info = {"config": self.config.to_dict()}
        info.update(meta or {})
        T.save_checkpoint(self.params, path, info)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "GuidanceModel":
        params, meta = T.load_checkpoint(path)
        if "config" not in meta:
            raise InputError(f"{path} has no model config block")
        return cls(GuidanceConfig.from_dict(meta["config"]), params)

    def copy(self) -> "GuidanceModel":
        return GuidanceModel(self.config, self.params.copy())

    def open_session(self, problem: ProblemInstance, rgg: Rgg) -> "GuidanceSession":
        return GuidanceSession(self, problem.world, rgg)


# --- environment encoder ---------------------------------------------------------

def obstacle_embedding(model: GuidanceModel, grid) -> Tensor:
    p = model.params
    n_conv = len(model.config.conv_channels)
    kernels = [p[f"env.conv{i}.W"] for i in range(1, n_conv + 1)]
    # A conv bias is added at every output cell, so its gradient is a sum over
    # cells and its curvature dwarfs every other block under plain SGD.  The
    # stored bias is divided by the cell count, which averages that sum.
    cells = [side ** model.config.workspace_dim for side in model.config.conv_sides()]
    biases = [T.mul(p[f"env.conv{i}.b"], 1.0 / cells[i - 1]) for i in range(1, n_conv + 1)]
    g = np.asarray(grid, dtype=float)[None]
    return T.conv_forward(g, kernels, biases, model.config.stride, p["env.obs.W"], p["env.obs.b"])


def node_embedding(model: GuidanceModel, scene: Scene) -> Tensor:
    p = model.params
    h = T.gat_forward(scene.features, scene.edges, p["env.gat.W"], p["env.gat.a"], model.config.slope)
    return T.gcn_forward(h, scene.edges, p["env.gcn.W"])


def encode_environment(model: GuidanceModel, scene: Scene) -> Tensor:
    """Per-node environment embedding ``O`` of shape ``(N, d_o)``."""
    p = model.params
    y = obstacle_embedding(model, scene.grid)
    x = node_embedding(model, scene)
    n = x.shape[0]
    ones = np.ones((n, 1))
    joined = T.concat([x, T.matmul(ones, T.reshape(y, (1, -1)))], axis=1)
    hidden = T.relu(T.dense(joined, p["env.mlp.W1"], p["env.mlp.b1"]))
    out = T.dense(hidden, p["env.mlp.W2"], p["env.mlp.b2"])
    return T.layer_norm(out, p["env.norm.gain"], p["env.norm.bias"])


# --- path encoder ----------------------------------------------------------------

def encode_path(model: GuidanceModel, path_states) -> Tensor:
    """RNN summary of already-normalised path states (visit order)."""
    p = model.params
    seq = np.asarray(path_states, dtype=float).reshape(-1, model.config.state_width)
    return T.rnn_encode(seq, p["path.rnn.Wx"], p["path.rnn.Wh"], p["path.rnn.b"])


# --- fusion -------------------------------------------------------------------------

@dataclass
class FuseCache:
    """Path-independent projections of ``O`` reused across planning steps."""

    O: Tensor
    K: Tensor
    V: Tensor
    S: Tensor  # Q_e K_e^T


def fuse_cache(model: GuidanceModel, O: Tensor) -> FuseCache:
    p = model.params
    Q = T.matmul(O, p["fuse.Qe"])
    K = T.matmul(O, p["fuse.Ke"])
    V = T.matmul(O, p["fuse.Ve"])
    return FuseCache(O=O, K=K, V=V, S=T.matmul(Q, T.transpose(K)))


def fuse(model: GuidanceModel, O, P, rows: Optional[Sequence[int]] = None,
         cache: Optional[FuseCache] = None) -> Tensor:
    """Path-conditioned node embeddings, optionally restricted to ``rows``.

    ``LayerNorm(softmax([Q_e K_e^T | Q_p K_e^T] / sqrt(d_o)) [V_e ; V_p] + O)``
    where the path column gives node ``i`` one extra attendable slot.
    """
    p = model.params
    cache = fuse_cache(model, T.as_tensor(O)) if cache is None else cache
    O = cache.O
    n, do = O.shape
    P = T.as_tensor(P)
    qp = T.matmul(P, p["fuse.Qp"])
    vp = T.matmul(P, p["fuse.Vp"])
    if rows is None:
        S, K_rows, O_rows = cache.S, cache.K, O
    else:
        rows = np.asarray(rows, dtype=np.int64)
        S, K_rows, O_rows = T.take_rows(cache.S, rows), T.take_rows(cache.K, rows), T.take_rows(O, rows)
    path_col = T.reshape(T.matmul(K_rows, qp), (-1, 1))
    scores = T.mul(T.concat([S, path_col], axis=1), 1.0 / math.sqrt(do))
    weights = T.softmax(scores, axis=1)
    values = T.concat([cache.V, T.reshape(vp, (1, do))], axis=0)
    mixed = T.matmul(weights, values)
    return T.layer_norm(T.add(mixed, O_rows), p["fuse.norm.gain"], p["fuse.norm.bias"])


# --- decoder ---------------------------------------------------------------------------

def decode_scores(model: GuidanceModel, fused_v: Tensor, fused_nbrs: Tensor,
                  state_v: np.ndarray, state_nbrs: np.ndarray) -> Tensor:
    """Guidance values for one vertex's neighbours, shape ``(k,)``."""
    p = model.params
    k = state_nbrs.shape[0]
    if k == 0:
        return Tensor(np.zeros(0))
    fv = T.take_rows(T.reshape(fused_v, (1, -1)), np.zeros(k, dtype=np.int64))
    delta = state_v[None, :] - state_nbrs
    feat = T.concat([fv, delta, fused_nbrs], axis=1)
    h = T.relu(T.dense(feat, p["dec.hx.W1"], p["dec.hx.b1"]))
    h = T.relu(T.dense(h, p["dec.hx.W2"], p["dec.hx.b2"]))
    s = T.relu(T.dense(h, p["dec.score.W1"], p["dec.score.b1"]))
    return T.reshape(T.dense(s, p["dec.score.W2"], p["dec.score.b2"]), (-1,))


def decode(model: GuidanceModel, fused: Tensor, scene: Scene, vertex: int,
           row_of: Optional[dict[int, int]] = None) -> GuidanceRow:
    """Decode one vertex.  ``row_of`` maps node index to row of ``fused``
    when ``fused`` holds only a subset of nodes."""
    scores = vertex_scores(model, fused, scene, vertex, row_of)
    return GuidanceRow(vertex, tuple(scene.adjacency[vertex]), tuple(float(v) for v in scores.data))


def vertex_scores(model: GuidanceModel, fused: Tensor, scene: Scene, vertex: int,
                  row_of: Optional[dict[int, int]] = None) -> Tensor:
    nbrs = np.asarray(scene.adjacency[vertex], dtype=np.int64)
    lookup = (lambda i: i) if row_of is None else row_of.__getitem__
    fv = T.take_rows(fused, np.array([lookup(vertex)]))
    fn = T.take_rows(fused, np.array([lookup(int(j)) for j in nbrs], dtype=np.int64))
    return decode_scores(model, fv, fn, scene.states[vertex], scene.states[nbrs])


# --- composition -----------------------------------------------------------------------

def _path_states(scene: Scene, path: Sequence[int]) -> np.ndarray:
    return scene.states[np.asarray(list(path), dtype=np.int64)] if len(path) else np.zeros((0, scene.states.shape[1]))


def row_scores(model: GuidanceModel, scene: Scene, path: Sequence[int], vertex: int,
               O: Optional[Tensor] = None, cache: Optional[FuseCache] = None) -> Tensor:
    """Differentiable guidance values at ``vertex`` (ordered by neighbour index)."""
    if O is None and cache is None:
        O = encode_environment(model, scene)
    if cache is None:
        cache = fuse_cache(model, O)
    P = encode_path(model, _path_states(scene, path))
    rows = [vertex] + list(scene.adjacency[vertex])
    fused = fuse(model, cache.O, P, rows=rows, cache=cache)
    row_of = {v: i for i, v in enumerate(rows)}
    return vertex_scores(model, fused, scene, vertex, row_of)


def guidance_row(model: GuidanceModel, world: WorldModel, rgg: Rgg, grid, path: Sequence[int],
                 vertex: int) -> GuidanceRow:
    if not 0 <= vertex < rgg.n_nodes:
        raise InputError(f"vertex {vertex} out of range")
    with no_grad():
        scene = prepare_scene(model.config, world, rgg, grid)
        scores = row_scores(model, scene, path, vertex)
    return GuidanceRow(vertex, tuple(rgg.adjacency[vertex]), tuple(float(v) for v in scores.data))


def guidance_matrix(model: GuidanceModel, world: WorldModel, rgg: Rgg, grid,
                    path: Sequence[int]) -> GuidanceMatrix:
    """Rows for every vertex from a single fusion pass over all nodes."""
    with no_grad():
        scene = prepare_scene(model.config, world, rgg, grid)
        O = encode_environment(model, scene)
        cache = fuse_cache(model, O)
        P = encode_path(model, _path_states(scene, path))
        fused = fuse(model, O, P, cache=cache)
        rows = tuple(decode(model, fused, scene, v) for v in range(rgg.n_nodes))
    return GuidanceMatrix(rows)


class GuidanceSession:
    """Caches the environment encoding of one roadmap for repeated row queries."""

    def __init__(self, model: GuidanceModel, world: WorldModel, rgg: Rgg, grid=None):
        self.model = model
        self.rgg = rgg
        with no_grad():
            self.scene = prepare_scene(model.config, world, rgg, grid)
            self.cache = fuse_cache(model, encode_environment(model, self.scene))

    def row(self, path: Sequence[int]) -> GuidanceRow:
        vertex = int(path[-1])
        with no_grad():
            scores = row_scores(self.model, self.scene, path, vertex, cache=self.cache)
        return GuidanceRow(vertex, tuple(self.rgg.adjacency[vertex]),
                           tuple(float(v) for v in scores.data))


# --- gradient check ----------------------------------------------------------------------

def gradient_check(config: Optional[GuidanceConfig] = None, seed: int = 0, n_nodes: int = 5,
                   tolerance: float = 1e-3, h: float = 1e-4,
                   max_entries: Optional[int] = None) -> T.GradCheckReport:
    """Finite-difference check of every parameter block on a small 2D problem.

    The loss is the cross-entropy of the guidance values at the end of a
    two-vertex path, which routes gradient through all four stages.
    """
    from .graph import connect_rdisc
    from .world import BoxObstacle, PointWorld

    config = config or GuidanceConfig(m=8)
    if n_nodes < 3:
        raise InputError("gradient check needs at least 3 nodes")
    rng = np.random.default_rng(seed)
    world = PointWorld(2, ((0.0, 0.0), (1.0, 1.0)), (BoxObstacle((0.5, 0.5), (0.15, 0.1)),))
    nodes = rng.uniform(0.05, 0.95, size=(n_nodes, 2))
    rgg = Rgg(nodes, tuple(connect_rdisc(nodes, 2.0)), 2.0)
    model = GuidanceModel.initialize(config, seed)
    # Draw every parameter away from zero so no block has a vanishing gradient.
    for _, t in model.params.items():
        t.data = t.data + rng.normal(0.0, 0.1, size=t.shape)
    scene = prepare_scene(config, world, rgg)
    path = [0, 2]
    target = 1

    def forward():
        scores = row_scores(model, scene, path, path[-1])
        return T.cross_entropy(scores, target)

    return T.grad_check(forward, model.params, tolerance=tolerance, h=h,
                        max_entries=max_entries, rng=np.random.default_rng(seed))
