"""Dataset generation and Dijkstra-supervised training of the guidance model.

A training step rolls the current model forward for ``k ~ U{1..10}`` greedy
steps from the start, asks Dijkstra (over the true edge validity) for the
next vertex from the rollout's endpoint, and applies one SGD step on the
cross-entropy between the endpoint's guidance values and that label.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import tensor as T
from .baselines import Path as GraphPath
from .baselines import dijkstra, graph_path
from .errors import ClutteredError, ConfigError, InputError
from .graph import Rgg, build_rgg, default_radius, rgg_from_dict, rgg_to_dict, sample_free
from .guidance import FuseCache, GuidanceModel, Scene, encode_environment, fuse_cache, prepare_scene, row_scores
from .tensor import no_grad
from .world import (ArmWorld, BoxObstacle, CollisionCounter, PointWorld, ProblemInstance,
                    WorldModel, default_resolution, edges_free, occupancy_grid,
                    state_diagonal, world_from_dict, world_to_dict)

FAMILIES = ("point", "arm")


@dataclass(frozen=True)
class GenConfig:
    """World family and roadmap settings for generated planning cases.

    Obstacle half extents are fractions of the workspace side length.
    ``min_separation`` is a fraction of the state-space diagonal.
    """

    family: str = "mixed"
    point_dim: int = 2
    arm_links: int = 7
    obstacles: tuple[int, int] = (3, 8)
    extent: tuple[float, float] = (0.04, 0.12)
    n_samples: int = 100
    radius: Optional[float] = None
    radius_factor: float = 1.5
    target_degree: float = 10.0
    min_separation: float = 0.3
    goal_radius: float = 0.0
    grid_m: int = 16
    max_retries: int = 100

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(int(v) for v in self.obstacles))
        object.__setattr__(self, "extent", tuple(float(v) for v in self.extent))
        if self.family not in FAMILIES + ("mixed",):
            raise ConfigError(f"unknown world family {self.family!r}")
        lo, hi = self.obstacles
        if lo < 0 or hi < lo:
            raise ConfigError("obstacle count range must satisfy 0 <= lo <= hi")
        if not 0 < self.extent[0] <= self.extent[1]:
            raise ConfigError("extent range must satisfy 0 < lo <= hi")
        if self.n_samples < 0 or self.max_retries < 1 or self.arm_links < 1 or self.point_dim < 1:
            raise ConfigError("sample count, retries, links and dimension must be positive")
        if self.point_dim not in (2, 3):
            raise ConfigError("point worlds must be 2D or 3D to have an occupancy grid")

    def family_for(self, index: int) -> str:
        return FAMILIES[index % 2] if self.family == "mixed" else self.family

    @classmethod
    def from_dict(cls, data: dict) -> "GenConfig":
        extra = set(data) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigError(f"unknown generation config keys {sorted(extra)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        out = asdict(self)
        out["obstacles"] = list(self.obstacles)
        out["extent"] = list(self.extent)
        return out


@dataclass(eq=False)
class TrainingCase:
    problem: ProblemInstance
    rgg: Rgg
    grid: np.ndarray
    edge_validity: np.ndarray
    case_id: str = ""
    seed: Optional[int] = None
    family: str = ""
    certificate: Optional[GraphPath] = None
    _valid: set = field(default_factory=set, repr=False)
    _scenes: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.edge_validity = np.asarray(self.edge_validity, dtype=bool)
        if self.edge_validity.shape != (self.rgg.n_edges,):
            raise InputError("edge_validity must have one entry per edge")
        self._valid = {e for e, ok in zip(self.rgg.edges, self.edge_validity.tolist()) if ok}

    @property
    def world(self) -> WorldModel:
        return self.problem.world

    def edge_ok(self, i: int, j: int) -> bool:
        return ((i, j) if i < j else (j, i)) in self._valid


@dataclass
class TrainStep:
    case_id: str
    prefix: list[int]
    label: Optional[int]
    loss: Optional[float]


def _sample_world(cfg: GenConfig, family: str, rng: np.random.Generator) -> WorldModel:
    count = int(rng.integers(cfg.obstacles[0], cfg.obstacles[1] + 1))
    if family == "point":
        base = PointWorld(cfg.point_dim, ((0.0,) * cfg.point_dim, (1.0,) * cfg.point_dim))
    else:
        k = cfg.arm_links
        base = ArmWorld((1.0 / k,) * k, ((-math.pi, math.pi),) * k, (0.0, 0.0))
    lo, hi = base.workspace_lower, base.workspace_upper
    side = hi - lo
    obstacles = []
    while len(obstacles) < count:
        center = rng.uniform(lo, hi)
        half = rng.uniform(cfg.extent[0], cfg.extent[1], size=lo.shape[0]) * side
        box = BoxObstacle(tuple(center), tuple(half))
        # an obstacle over the arm base would block every configuration
        if family == "arm" and np.all(np.abs(center - np.asarray(base.base)) <= half):
            continue
        obstacles.append(box)
    return base.with_obstacles(obstacles)


def _sample_endpoints(world: WorldModel, cfg: GenConfig, rng: np.random.Generator):
    min_d = cfg.min_separation * state_diagonal(world)
    for _ in range(50):
        pair = sample_free(world, 2, rng)
        if np.linalg.norm(pair[0] - pair[1]) >= min_d:
            return pair[0], pair[1]
    return None


def generate_case(cfg: GenConfig, rng: np.random.Generator, family: Optional[str] = None,
                  case_id: str = "", seed: Optional[int] = None) -> TrainingCase:
    """Sample a world, start/goal and roadmap with a certified feasible path.

    Rejected draws (cluttered free space, no valid start/goal pair, or no
    collision-free roadmap path) are retried up to ``cfg.max_retries`` times.
    """
    family = family or cfg.family_for(0)
    if family not in FAMILIES:
        raise ConfigError(f"unknown world family {family!r}")
    for _ in range(cfg.max_retries):
        world = _sample_world(cfg, family, rng)
        try:
            ends = _sample_endpoints(world, cfg, rng)
            if ends is None:
                continue
            problem = ProblemInstance(world, tuple(ends[0]), tuple(ends[1]), cfg.goal_radius)
            radius = cfg.radius if cfg.radius is not None else default_radius(
                world, cfg.n_samples, rng, target_degree=cfg.target_degree, factor=cfg.radius_factor)
            rgg = build_rgg(problem, cfg.n_samples, radius, rng)
        except ClutteredError:
            continue
        validity = edge_validity(problem, rgg)
        case = TrainingCase(problem, rgg, occupancy_grid(world, cfg.grid_m), validity,
                            case_id=case_id, seed=seed, family=family)
        path = dijkstra(rgg, case.edge_ok, rgg.init, rgg.goal)
        if path is None:
            continue
        case.certificate = path
        return case
    raise ConfigError(f"could not generate a feasible case in {cfg.max_retries} attempts")


def edge_validity(problem: ProblemInstance, rgg: Rgg, resolution: Optional[float] = None) -> np.ndarray:
    if rgg.n_edges == 0:
        return np.zeros(0, dtype=bool)
    res = default_resolution(problem.world) if resolution is None else resolution
    pairs = np.array(rgg.edges)
    return edges_free(problem.world, rgg.nodes[pairs[:, 0]], rgg.nodes[pairs[:, 1]], res,
                      CollisionCounter())


def generate_dataset(cfg: GenConfig, count: int, seed: int, start_index: int = 0,
                     prefix: str = "case") -> list[TrainingCase]:
    cases = []
    for i in range(start_index, start_index + count):
        rng = np.random.default_rng([seed, i])
        cases.append(generate_case(cfg, rng, cfg.family_for(i), case_id=f"{prefix}{i:04d}", seed=seed))
    return cases


# --- rollout and supervision ----------------------------------------------------------

class _Prepared:
    """Scene plus environment encoding of one case under the current parameters."""

    def __init__(self, model: GuidanceModel, case: TrainingCase, scene: Scene, cache: FuseCache):
        self.model, self.case, self.scene, self.cache = model, case, scene, cache

    def scores(self, path: Sequence[int]) -> T.Tensor:
        return row_scores(self.model, self.scene, path, int(path[-1]), cache=self.cache)


def case_scene(model: GuidanceModel, case: TrainingCase) -> Scene:
    scene = case._scenes.get(model.config)
    if scene is None:
        scene = prepare_scene(model.config, case.world, case.rgg, case.grid)
        case._scenes[model.config] = scene
    return scene


def _prepare(model: GuidanceModel, case: TrainingCase, track: bool) -> _Prepared:
    scene = case_scene(model, case)
    if track:
        cache = fuse_cache(model, encode_environment(model, scene))
    else:
        with no_grad():
            cache = fuse_cache(model, encode_environment(model, scene))
    return _Prepared(model, case, scene, cache)


def _greedy_prefix(prep: _Prepared, k: int) -> list[int]:
    case = prep.case
    rgg = case.rgg
    stack = [rgg.init]
    visited = {rgg.init}
    with no_grad():
        for _ in range(k):
            if stack[-1] == rgg.goal:
                break
            values = prep.scores(stack).data
            nbrs = rgg.adjacency[stack[-1]]
            order = sorted(range(len(nbrs)), key=lambda i: (-values[i], nbrs[i]))
            nxt = next((nbrs[i] for i in order
                        if nbrs[i] not in visited and case.edge_ok(stack[-1], nbrs[i])), None)
            if nxt is None:
                break
            stack.append(nxt)
            visited.add(nxt)
    return stack


def rollout_prefix(model: GuidanceModel, case: TrainingCase, k: int,
                   rng: Optional[np.random.Generator] = None) -> list[int]:
    """Up to ``k`` greedy guided moves from the start over truly valid edges.

    Stops early at the goal or at a dead end; never revisits a vertex.
    """
    if k < 1:
        raise InputError("rollout length must be at least 1")
    return _greedy_prefix(_prepare(model, case, track=False), k)


def supervisor_label(case: TrainingCase, endpoint: int) -> Optional[int]:
    """Second vertex of the Dijkstra path from ``endpoint`` to the goal."""
    if endpoint == case.rgg.goal:
        return None
    path = dijkstra(case.rgg, case.edge_ok, endpoint, case.rgg.goal)
    if path is None or len(path.nodes) < 2:
        return None
    return path.nodes[1]


def train_step(model: GuidanceModel, case: TrainingCase, rng: np.random.Generator,
               lr: float = 1e-3, weight_decay: float = 1e-3, k: Optional[int] = None) -> TrainStep:
    k = int(rng.integers(1, 11)) if k is None else k
    prep = _prepare(model, case, track=True)
    prefix = _greedy_prefix(prep, k)
    label = supervisor_label(case, prefix[-1])
    if label is None:
        model.params.zero_grad()
        return TrainStep(case.case_id, prefix, None, None)
    loss = _fit(prep, prefix, label, lr, weight_decay)
    return TrainStep(case.case_id, prefix, label, loss)


def _fit(prep: _Prepared, prefix: Sequence[int], label: int, lr: float, weight_decay: float) -> float:
    nbrs = prep.case.rgg.adjacency[prefix[-1]]
    if label not in nbrs:
        raise AssertionError(f"label {label} is not a neighbour of {prefix[-1]}")
    loss = T.cross_entropy(prep.scores(prefix), nbrs.index(label))
    prep.model.params.zero_grad()
    loss.backward()
    T.sgd_step(prep.model.params, lr, weight_decay)
    return float(loss.data)


def supervised_step(model: GuidanceModel, case: TrainingCase, prefix: Sequence[int], label: int,
                    lr: float = 1e-3, weight_decay: float = 1e-3) -> float:
    """One SGD update on a fixed (prefix, label) pair; returns the pre-update loss."""
    return _fit(_prepare(model, case, track=True), list(prefix), label, lr, weight_decay)


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    steps: int
    skipped: int
    accuracy: Optional[float]
    wall_time: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: GuidanceModel
    curve: list[float]
    log: list[EpochLog]


def train(model: GuidanceModel, dataset: Sequence[TrainingCase], epochs: int,
          rng: np.random.Generator, lr: float = 1e-3, weight_decay: float = 1e-3,
          checkpoint_dir: Optional[Union[str, Path]] = None,
          eval_cases: Optional[Sequence[TrainingCase]] = None, eval_seed: int = 0,
          on_epoch: Optional[Callable[[EpochLog], None]] = None) -> TrainResult:
    """SGD over shuffled cases; one train step per case per epoch.

    The model is updated in place and also returned.  With ``checkpoint_dir``
    set, parameters are written after every epoch as ``epoch_XXX.json``.
    """
    if not dataset:
        raise InputError("training set is empty")
    curve: list[float] = []
    log: list[EpochLog] = []
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        losses = []
        skipped = 0
        for idx in rng.permutation(len(dataset)):
            step = train_step(model, dataset[int(idx)], rng, lr, weight_decay)
            if step.loss is None:
                skipped += 1
            else:
                losses.append(step.loss)
        mean_loss = float(np.mean(losses)) if losses else float("nan")
        curve.append(mean_loss)
        acc = None
        if eval_cases:
            acc = eval_accuracy(model, eval_cases, np.random.default_rng(eval_seed)).accuracy
        entry = EpochLog(epoch, mean_loss, len(losses), skipped, acc, time.perf_counter() - t0)
        log.append(entry)
        if checkpoint_dir is not None:
            model.save(Path(checkpoint_dir) / f"epoch_{epoch:03d}.json", {"epoch": epoch})
        if on_epoch is not None:
            on_epoch(entry)
    return TrainResult(model, curve, log)


@dataclass
class AccuracyReport:
    accuracy: float
    samples: int
    mean_degree: float

    @property
    def random_baseline(self) -> float:
        return 1.0 / self.mean_degree if self.mean_degree > 0 else 0.0


def eval_accuracy(model: GuidanceModel, dataset: Sequence[TrainingCase],
                  rng: np.random.Generator, prefixes_per_case: int = 5) -> AccuracyReport:
    """Top-1 next-vertex accuracy against the Dijkstra label.

    Ties in the guidance values go to the lowest neighbour index.
    """
    hits = total = 0
    degrees = []
    for case in dataset:
        prep = _prepare(model, case, track=False)
        for _ in range(prefixes_per_case):
            k = int(rng.integers(1, 11))
            prefix = _greedy_prefix(prep, k)
            label = supervisor_label(case, prefix[-1])
            if label is None:
                continue
            with no_grad():
                values = prep.scores(prefix).data
            nbrs = case.rgg.adjacency[prefix[-1]]
            best = min(range(len(nbrs)), key=lambda i: (-values[i], nbrs[i]))
            hits += int(nbrs[best] == label)
            total += 1
            degrees.append(len(nbrs))
    return AccuracyReport(hits / total if total else 0.0, total,
                          float(np.mean(degrees)) if degrees else 0.0)


# --- dataset files ----------------------------------------------------------------------

def _bits(arr: np.ndarray) -> str:
    return "".join("1" if v else "0" for v in np.asarray(arr).ravel().tolist())


def case_to_dict(case: TrainingCase) -> dict:
    p = case.problem
    return {
        "id": case.case_id, "seed": case.seed, "family": case.family,
        "world": world_to_dict(p.world),
        "problem": {"x_init": list(p.x_init), "x_goal": list(p.x_goal), "goal_radius": p.goal_radius},
        "rgg": rgg_to_dict(case.rgg),
        "edge_validity": _bits(case.edge_validity),
        "grid": {"shape": list(case.grid.shape), "cells": _bits(case.grid)},
        "certificate": list(case.certificate.nodes) if case.certificate is not None else None,
    }


def case_from_dict(data: dict) -> TrainingCase:
    try:
        world = world_from_dict(data["world"])
        pd = data["problem"]
        problem = ProblemInstance(world, tuple(pd["x_init"]), tuple(pd["x_goal"]), float(pd["goal_radius"]))
        rgg = rgg_from_dict(data["rgg"])
        validity = np.array([c == "1" for c in data["edge_validity"]], dtype=bool)
        g = data["grid"]
        grid = np.array([int(c) for c in g["cells"]], dtype=np.uint8).reshape(g["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed case file: {exc!r}") from exc
    case = TrainingCase(problem, rgg, grid, validity, case_id=data.get("id", ""),
                        seed=data.get("seed"), family=data.get("family", ""))
    if data.get("certificate"):
        case.certificate = graph_path(rgg, data["certificate"])
    return case


def dumps_case(case: TrainingCase) -> str:
    return json.dumps(case_to_dict(case), sort_keys=True) + "\n"


def config_hash(data: dict) -> str:
    return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()


def save_dataset(out_dir: Union[str, Path], splits: dict[str, Sequence[TrainingCase]],
                 cfg: GenConfig, seed: int) -> Path:
    """One JSON file per case plus ``manifest.json`` listing splits, seed and config hash."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"seed": seed, "config": cfg.to_dict(), "config_hash": config_hash(cfg.to_dict()),
                "splits": {}}
    for split, cases in splits.items():
        names = []
        for case in cases:
            name = f"{case.case_id}.json"
            (out / name).write_text(dumps_case(case))
            names.append(name)
        manifest["splits"][split] = names
    manifest["count"] = sum(len(v) for v in manifest["splits"].values())
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return out


def load_dataset(path: Union[str, Path]) -> tuple[dict[str, list[TrainingCase]], dict]:
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise InputError(f"{root} has no manifest.json")
    manifest = json.loads(manifest_path.read_text())
    splits = {split: [case_from_dict(json.loads((root / name).read_text())) for name in names]
              for split, names in manifest["splits"].items()}
    return splits, manifest
