"""Benchmark sweeps: planners x cases x sample counts, with aggregation and reports.

Graph planners in one (case, sample count, trial) cell share a single
roadmap so their collision-check counts are directly comparable.  RRT* grows
its own tree with the roadmap radius as steering step and the sample count
as its sample budget.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .baselines import PlanResult, lazy_prm_plan, path_is_valid, prm_plan, rrt_star_plan
from .errors import ConfigError
from .graph import build_rgg, default_radius
from .guidance import GuidanceModel
from .plan import gnn_plan
from .world import CollisionCounter, ProblemInstance

GRAPH_PLANNERS = ("gnn", "gnn_random", "prm", "lazy_prm")
PLANNERS = GRAPH_PLANNERS + ("rrt_star",)
RECORD_FIELDS = ("planner", "case", "seed", "n_samples", "edge_checks", "point_checks",
                 "build_time", "plan_time", "total_time", "cost", "success")
TIMING_FIELDS = ("build_time", "plan_time", "total_time")
METRICS = ("edge_checks", "point_checks", "build_time", "plan_time", "total_time", "cost")


@dataclass(frozen=True)
class BenchConfig:
    """Sweep definition.

    ``gnn_random`` is the guided planner with untrained weights drawn from
    ``random_model_seed``; it is the control for what training buys.
    """

    planners: tuple[str, ...] = ("gnn", "prm", "lazy_prm", "rrt_star")
    sample_counts: tuple[int, ...] = (200, 400, 600, 800, 1000)
    trials: int = 1
    radius: Optional[float] = None
    radius_factor: float = 1.5
    target_degree: float = 10.0
    step_budget: Optional[int] = None
    random_model_seed: int = 12345
    validate_paths: bool = True

    def __post_init__(self):
        object.__setattr__(self, "planners", tuple(self.planners))
        object.__setattr__(self, "sample_counts", tuple(int(n) for n in self.sample_counts))
        if not self.planners:
            raise ConfigError("no planners requested")
        unknown = [p for p in self.planners if p not in PLANNERS]
        if unknown:
            raise ConfigError(f"unknown planners {unknown}; choose from {list(PLANNERS)}")
        if len(set(self.planners)) != len(self.planners):
            raise ConfigError("planner list has duplicates")
        if not self.sample_counts or min(self.sample_counts) < 0:
            raise ConfigError("sample counts must be a nonempty list of nonnegative integers")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.radius is not None and self.radius <= 0:
            raise ConfigError("radius must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "BenchConfig":
        extra = set(data) - {f.name for f in fields(cls)}
        if extra:
            raise ConfigError(f"unknown bench config keys {sorted(extra)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        out = asdict(self)
        out["planners"] = list(self.planners)
        out["sample_counts"] = list(self.sample_counts)
        return out


@dataclass(frozen=True)
class TrialRecord:
    planner: str
    case: str
    seed: int
    n_samples: int
    edge_checks: int
    point_checks: int
    build_time: float
    plan_time: float
    total_time: float
    cost: Optional[float]
    success: bool


@dataclass(frozen=True)
class SummaryRow:
    planner: str
    n_samples: int
    trials: int
    success_rate: float
    means: dict
    variances: dict


@dataclass(frozen=True)
class BenchCase:
    """A named planning problem for the sweep."""

    case_id: str
    problem: ProblemInstance


def _as_cases(cases) -> list[BenchCase]:
    out = []
    for i, c in enumerate(cases):
        if isinstance(c, BenchCase):
            out.append(c)
        elif isinstance(c, ProblemInstance):
            out.append(BenchCase(f"case{i:04d}", c))
        else:  # a TrainingCase or anything with .problem and .case_id
            out.append(BenchCase(getattr(c, "case_id", "") or f"case{i:04d}", c.problem))
    return out


def trial_seed(seed: int, case_index: int, n: int, trial: int) -> int:
    return int(np.random.SeedSequence([seed, case_index, n, trial]).generate_state(1)[0])


def _record(planner: str, case_id: str, seed: int, n: int, result: PlanResult,
            build_time: float) -> TrialRecord:
    return TrialRecord(planner, case_id, seed, n, result.edge_checks, result.point_checks,
                       build_time, result.plan_time, build_time + result.plan_time,
                       result.cost if result.success else None, bool(result.success))


def run_benchmark(cfg: BenchConfig, cases: Sequence, model: Union[GuidanceModel, str, Path, None],
                  seed: int, progress=None) -> list[TrialRecord]:
    """Run every (case, sample count, trial, planner) cell in a fixed order."""
    if "gnn" in cfg.planners:
        if model is None:
            raise ConfigError("planner 'gnn' needs a model checkpoint")
        if not isinstance(model, GuidanceModel):
            path = Path(model)
            if not path.exists():
                raise ConfigError(f"checkpoint {path} not found")
            model = GuidanceModel.load(path)
    random_model = None
    if "gnn_random" in cfg.planners:
        config = model.config if isinstance(model, GuidanceModel) else None
        random_model = GuidanceModel.initialize(config, seed=cfg.random_model_seed)
    records: list[TrialRecord] = []
    for ci, case in enumerate(_as_cases(cases)):
        problem = case.problem
        for n in cfg.sample_counts:
            for trial in range(cfg.trials):
                s = trial_seed(seed, ci, n, trial)
                rng = np.random.default_rng(s)
                t0 = time.perf_counter()
                radius = cfg.radius if cfg.radius is not None else default_radius(
                    problem.world, n, rng, target_degree=cfg.target_degree, factor=cfg.radius_factor)
                rgg = build_rgg(problem, n, radius, rng)
                build_time = time.perf_counter() - t0
                for planner in cfg.planners:
                    counter = CollisionCounter()
                    if planner == "prm":
                        result = prm_plan(problem, rgg, counter)
                    elif planner == "lazy_prm":
                        result = lazy_prm_plan(problem, rgg, counter)
                    elif planner == "gnn":
                        result = gnn_plan(model, problem, rgg, cfg.step_budget, counter)
                    elif planner == "gnn_random":
                        result = gnn_plan(random_model, problem, rgg, cfg.step_budget, counter)
                    else:
                        result = rrt_star_plan(problem, n, radius, np.random.default_rng(s), counter)
                    if cfg.validate_paths and result.success and not path_is_valid(problem, result.path):
                        raise AssertionError(f"{planner} returned an invalid path on {case.case_id}")
                    rec = _record(planner, case.case_id, s, n,
                                  result, build_time if planner in GRAPH_PLANNERS else 0.0)
                    records.append(rec)
                    if progress is not None:
                        progress(rec)
    return records


# --- aggregation -----------------------------------------------------------------------

def _stats(values: list[float]) -> tuple[Optional[float], Optional[float]]:
    if not values:
        return None, None
    arr = np.asarray(sorted(values), dtype=float)  # sorted: order-independent sums
    return float(arr.mean()), float(arr.var())


def summarize(records: Sequence[TrialRecord]) -> list[SummaryRow]:
    """Per (planner, n_samples): means and population variances.

    Cost statistics use successful trials only; all other metrics use every trial.
    """
    if not records:
        raise ValueError("no records to summarize")
    groups: dict[tuple[str, int], list[TrialRecord]] = {}
    for r in records:
        groups.setdefault((r.planner, r.n_samples), []).append(r)
    order = {p: i for i, p in enumerate(PLANNERS)}
    rows = []
    for (planner, n), recs in sorted(groups.items(), key=lambda kv: (order.get(kv[0][0], 99), kv[0][0], kv[0][1])):
        means, variances = {}, {}
        for m in METRICS:
            vals = [getattr(r, m) for r in recs if getattr(r, m) is not None]
            means[m], variances[m] = _stats(vals)
        rate = sum(r.success for r in recs) / len(recs)
        rows.append(SummaryRow(planner, n, len(recs), rate, means, variances))
    return rows


# --- export --------------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def summary_header() -> list[str]:
    cols = ["planner", "n_samples", "trials", "success_rate"]
    for m in METRICS:
        cols += [f"{m}_mean", f"{m}_var"]
    return cols


def _summary_values(row: SummaryRow) -> list:
    vals = [row.planner, row.n_samples, row.trials, row.success_rate]
    for m in METRICS:
        vals += [row.means[m], row.variances[m]]
    return vals


def records_csv(records: Sequence[TrialRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_FIELDS)
    for r in records:
        w.writerow([_fmt(getattr(r, f)) for f in RECORD_FIELDS])
    return buf.getvalue()


def summary_csv(rows: Sequence[SummaryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(summary_header())
    for row in rows:
        w.writerow([_fmt(v) for v in _summary_values(row)])
    return buf.getvalue()


def _opt_float(s: str) -> Optional[float]:
    return None if s == "" else float(s)


def parse_records_csv(text: str) -> list[TrialRecord]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != RECORD_FIELDS:
        raise ValueError("unexpected record CSV header")
    return [TrialRecord(d["planner"], d["case"], int(d["seed"]), int(d["n_samples"]),
                        int(d["edge_checks"]), int(d["point_checks"]), float(d["build_time"]),
                        float(d["plan_time"]), float(d["total_time"]), _opt_float(d["cost"]),
                        d["success"] == "true") for d in reader]


def parse_summary_csv(text: str) -> list[SummaryRow]:
    reader = csv.DictReader(io.StringIO(text))
    if list(reader.fieldnames or ()) != summary_header():
        raise ValueError("unexpected summary CSV header")
    rows = []
    for d in reader:
        means = {m: _opt_float(d[f"{m}_mean"]) for m in METRICS}
        variances = {m: _opt_float(d[f"{m}_var"]) for m in METRICS}
        rows.append(SummaryRow(d["planner"], int(d["n_samples"]), int(d["trials"]),
                               float(d["success_rate"]), means, variances))
    return rows


def records_json(records: Sequence[TrialRecord]) -> str:
    return json.dumps([asdict(r) for r in records], indent=1) + "\n"


def summary_json(rows: Sequence[SummaryRow]) -> str:
    return json.dumps([asdict(r) for r in rows], indent=1) + "\n"


def export(items: Sequence, path: Union[str, Path], fmt: str = "csv") -> Path:
    """Write records or summary rows as ``csv`` or ``json``."""
    if not items:
        raise ValueError("nothing to export")
    is_summary = isinstance(items[0], SummaryRow)
    if fmt == "csv":
        text = summary_csv(items) if is_summary else records_csv(items)
    elif fmt == "json":
        text = summary_json(items) if is_summary else records_json(items)
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    path = Path(path)
    path.write_text(text)
    return path


# --- report ------------------------------------------------------------------------------

def _num(v: Optional[float], digits: int = 4) -> str:
    return "n/a" if v is None else f"{v:.{digits}g}"


def compare_report(rows: Sequence[SummaryRow]) -> str:
    """Markdown table per planner and sample count, then gnn/baseline ratio lines."""
    out = ["| planner | n | success | edge checks | plan time (s) | total time (s) | cost |",
           "|---|---|---|---|---|---|---|"]
    for r in rows:
        out.append(f"| {r.planner} | {r.n_samples} | {r.success_rate:.3f} | "
                   f"{_num(r.means['edge_checks'])} | {_num(r.means['plan_time'])} | "
                   f"{_num(r.means['total_time'])} | {_num(r.means['cost'])} |")
    by_key = {(r.planner, r.n_samples): r for r in rows}
    counts = sorted({r.n_samples for r in rows})
    out.append("")
    if not any(r.planner == "gnn" for r in rows):
        out.append("No gnn rows in the summary; ratios omitted.")
        return "\n".join(out) + "\n"
    for n in counts:
        g = by_key.get(("gnn", n))
        if g is None:
            out.append(f"n={n}: no gnn rows; ratios omitted.")
            continue
        for base in ("prm", "lazy_prm", "rrt_star", "gnn_random"):
            b = by_key.get((base, n))
            if b is None:
                out.append(f"n={n}: {base} absent; ratio omitted.")
                continue
            parts = []
            for metric in ("edge_checks", "plan_time"):
                gv, bv = g.means[metric], b.means[metric]
                ratio = None if not bv or gv is None else gv / bv
                parts.append(f"{metric} ratio {_num(ratio)}")
            out.append(f"n={n}: gnn/{base} " + ", ".join(parts))
        for base in ("prm", "rrt_star"):
            b = by_key.get((base, n))
            if b is not None:
                holds = g.means["edge_checks"] < b.means["edge_checks"]
                out.append(f"n={n}: claim gnn checks < {base} checks: {'holds' if holds else 'fails'}")
    return "\n".join(out) + "\n"
