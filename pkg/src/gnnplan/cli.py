"""Command-line entry point: ``gnnplan {gen,train,plan,bench,gradcheck}``.

Exit codes: 0 success, 1 planner or check failure, 2 configuration or input error.
Every command takes ``--config`` (JSON, see ``configs/default.json``) and ``--seed``;
flags given on the command line override the matching config fields.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .errors import ClutteredError, ConfigError, InputError

SECTIONS = ("seed", "generation", "dataset", "model", "training", "plan", "bench", "gradcheck")

DEFAULTS = {
    "seed": 0,
    "dataset": {"train": 300, "test": 30},
    "training": {"epochs": 20, "lr": 1e-3, "weight_decay": 1e-3},
    "plan": {"n": 200, "radius": None, "step_budget": None, "planner": "gnn"},
    "gradcheck": {"nodes": 5, "m": 8, "tolerance": 1e-3, "h": 1e-4},
}


def load_config(path: Optional[str]) -> dict:
    """Read a config file and fill in defaults; unknown sections are an error."""
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    extra = set(data) - set(SECTIONS)
    if extra:
        raise ConfigError(f"unknown config sections {sorted(extra)}")
    out = {"seed": data.get("seed", DEFAULTS["seed"])}
    for key in ("generation", "model", "bench"):
        section = data.get(key, {})
        if not isinstance(section, dict):
            raise ConfigError(f"config section {key!r} must be an object")
        out[key] = dict(section)
    for key in ("dataset", "training", "plan", "gradcheck"):
        section = data.get(key, {})
        if not isinstance(section, dict):
            raise ConfigError(f"config section {key!r} must be an object")
        extra = set(section) - set(DEFAULTS[key])
        if extra:
            raise ConfigError(f"unknown keys in {key!r}: {sorted(extra)}")
        out[key] = {**DEFAULTS[key], **section}
    return out


def _seed(args, cfg) -> int:
    return int(args.seed if args.seed is not None else cfg["seed"])


def _model_config(cfg: dict):
    from .guidance import GuidanceConfig
    try:
        return GuidanceConfig.from_dict(cfg["model"])
    except (TypeError, InputError) as exc:
        raise ConfigError(f"model config: {exc}") from exc


def _vector(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise InputError(f"cannot parse state {text!r}; expected comma-separated numbers") from exc


# --- commands ----------------------------------------------------------------------------

def cmd_gen(args) -> int:
    from .train import GenConfig, generate_dataset, save_dataset
    cfg = load_config(args.config)
    seed = _seed(args, cfg)
    gen = GenConfig.from_dict(cfg["generation"])
    n_train = args.train if args.train is not None else int(cfg["dataset"]["train"])
    n_test = args.test if args.test is not None else int(cfg["dataset"]["test"])
    if n_train < 0 or n_test < 0:
        raise ConfigError("case counts must be nonnegative")
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        raise ConfigError(f"output directory {out} is not empty")
    t0 = time.perf_counter()
    train = generate_dataset(gen, n_train, seed, prefix="train")
    test = generate_dataset(gen, n_test, seed, start_index=n_train, prefix="test")
    created = not out.exists()
    try:
        save_dataset(out, {"train": train, "test": test}, gen, seed)
    except Exception:
        if created:
            shutil.rmtree(out, ignore_errors=True)
        raise
    print(f"wrote {len(train)} train + {len(test)} test cases to {out} "
          f"(seed {seed}, {time.perf_counter() - t0:.1f} s)")
    return 0


def cmd_train(args) -> int:
    from .guidance import GuidanceModel
    from .train import load_dataset, train
    cfg = load_config(args.config)
    seed = _seed(args, cfg)
    splits, manifest = load_dataset(args.data)
    cases = splits.get("train") or []
    if not cases:
        raise ConfigError(f"dataset {args.data} has no training cases")
    tcfg = cfg["training"]
    epochs = int(args.epochs if args.epochs is not None else tcfg["epochs"])
    lr = float(args.lr if args.lr is not None else tcfg["lr"])
    model = GuidanceModel.initialize(_model_config(cfg), seed)
    eval_cases = None if args.no_eval else splits.get("test")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = out.with_name(out.name + ".log.jsonl")

    with log_path.open("w") as log:
        def on_epoch(entry):
            rec = {"seed": seed, **entry.to_dict()}
            log.write(json.dumps(rec) + "\n")
            log.flush()
            acc = "" if entry.accuracy is None else f"  accuracy {entry.accuracy:.3f}"
            print(f"epoch {entry.epoch:3d}  loss {entry.mean_loss:.4f}{acc}  ({entry.wall_time:.1f} s)")

        result = train(model, cases, epochs, np.random.default_rng(seed), lr=lr,
                       weight_decay=float(tcfg["weight_decay"]), checkpoint_dir=args.checkpoint_dir,
                       eval_cases=eval_cases, eval_seed=seed, on_epoch=on_epoch)
    model.save(out, {"seed": seed, "epochs": epochs, "lr": lr,
                     "weight_decay": float(tcfg["weight_decay"]),
                     "dataset_config_hash": manifest.get("config_hash"), "curve": result.curve})
    print(f"checkpoint {out}, log {log_path}")
    return 0


def cmd_plan(args) -> int:
    from .baselines import lazy_prm_plan, prm_plan, rrt_star_plan
    from .graph import build_rgg, default_radius
    from .guidance import GuidanceModel
    from .plan import gnn_plan, render_svg, save_svg
    from .world import ProblemInstance, load_world
    cfg = load_config(args.config)
    seed = _seed(args, cfg)
    pcfg = cfg["plan"]
    planner = args.planner or pcfg["planner"]
    n = int(args.n if args.n is not None else pcfg["n"])
    world = load_world(args.world)
    problem = ProblemInstance(world, _vector(args.init), _vector(args.goal), args.goal_radius)
    problem.validate()
    rng = np.random.default_rng(seed)
    radius = args.radius if args.radius is not None else pcfg["radius"]
    if radius is None:
        radius = default_radius(world, n, rng)
    if planner == "rrt_star":
        result = rrt_star_plan(problem, n, float(radius), rng)
    else:
        rgg = build_rgg(problem, n, float(radius), rng)
        if planner == "prm":
            result = prm_plan(problem, rgg)
        elif planner == "lazy_prm":
            result = lazy_prm_plan(problem, rgg)
        elif planner == "gnn":
            if args.checkpoint is None:
                raise ConfigError("planner gnn needs --checkpoint")
            if not Path(args.checkpoint).exists():
                raise ConfigError(f"checkpoint {args.checkpoint} not found")
            model = GuidanceModel.load(args.checkpoint)
            budget = args.step_budget if args.step_budget is not None else pcfg["step_budget"]
            result = gnn_plan(model, problem, rgg, budget)
        else:
            raise ConfigError(f"unknown planner {planner!r}")
        if args.svg:
            save_svg(render_svg(problem, rgg, result), args.svg)
    out = {
        "planner": planner, "seed": seed, "n_samples": n, "radius": float(radius),
        "success": result.success, "reason": result.reason,
        "cost": result.cost, "edge_checks": result.edge_checks, "point_checks": result.point_checks,
        "plan_time": result.plan_time,
        "path": None if result.path is None else result.path.states.tolist(),
        "nodes": None if result.path is None or result.path.nodes is None else list(result.path.nodes),
    }
    print(json.dumps(out, indent=1))
    return 0 if result.success else 1


def cmd_bench(args) -> int:
    from .bench import BenchConfig, compare_report, export, run_benchmark, summarize
    from .train import load_dataset
    cfg = load_config(args.config)
    seed = _seed(args, cfg)
    bdict = dict(cfg["bench"])
    if args.planners is not None:
        bdict["planners"] = [p for p in args.planners.split(",") if p]
    if args.counts is not None:
        bdict["sample_counts"] = [int(v) for v in args.counts.split(",") if v]
    bcfg = BenchConfig.from_dict(bdict)
    splits, _ = load_dataset(args.data)
    cases = splits.get(args.split) or []
    if args.cases is not None:
        cases = cases[:args.cases]
    if not cases:
        raise ConfigError(f"split {args.split!r} of {args.data} is empty")
    records = run_benchmark(bcfg, cases, args.checkpoint, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(records)
    export(records, out / "records.csv")
    export(summary, out / "summary.csv")
    (out / "report.md").write_text(f"seed {seed}\n\n" + compare_report(summary))
    print(f"{len(records)} trials -> {out}/records.csv, summary.csv, report.md")
    return 0


def _sci(v: float) -> str:
    mant, exp = f"{v:.0e}".split("e")
    return f"{mant}e{int(exp)}"


def cmd_gradcheck(args) -> int:
    from dataclasses import replace
    from .guidance import gradient_check
    cfg = load_config(args.config)
    seed = _seed(args, cfg)
    g = cfg["gradcheck"]
    mcfg = replace(_model_config(cfg), m=int(g["m"]))
    tol = float(g["tolerance"])
    report = gradient_check(mcfg, seed, n_nodes=int(g["nodes"]), tolerance=tol, h=float(g["h"]))
    for line in report.lines():
        print(line)
    if report.passed:
        print(f"PASS, max rel err < {_sci(tol)} (max {report.max_error:.3e}, seed {seed})")
        return 0
    print(f"FAIL, max rel err {report.max_error:.3e} >= {_sci(tol)} (seed {seed})")
    return 1


# --- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gnnplan", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"gnnplan {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out_required=False):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        if out_required:
            p.add_argument("--out", required=True)

    p = sub.add_parser("gen", help="generate a dataset directory")
    common(p, True)
    p.add_argument("--train", type=int, help="number of training cases")
    p.add_argument("--test", type=int, help="number of held-out cases")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a guidance model")
    common(p, True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--checkpoint-dir", help="write one checkpoint per epoch here")
    p.add_argument("--no-eval", action="store_true", help="skip held-out accuracy per epoch")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("plan", help="solve one problem and print the result as JSON")
    common(p)
    p.add_argument("--world", required=True, help="world JSON file")
    p.add_argument("--init", required=True, help="comma-separated start state")
    p.add_argument("--goal", required=True, help="comma-separated goal state")
    p.add_argument("--goal-radius", type=float, default=0.0)
    p.add_argument("--checkpoint")
    p.add_argument("--planner", choices=("gnn", "prm", "lazy_prm", "rrt_star"))
    p.add_argument("--n", type=int, help="number of samples")
    p.add_argument("--radius", type=float)
    p.add_argument("--step-budget", type=int)
    p.add_argument("--svg", help="write an SVG render (2D point worlds)")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("bench", help="benchmark planners on held-out cases")
    common(p, True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="test")
    p.add_argument("--cases", type=int, help="use only the first N cases of the split")
    p.add_argument("--planners", help="comma-separated planner ids")
    p.add_argument("--counts", help="comma-separated sample counts")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference check of the guidance model")
    common(p)
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InputError, ClutteredError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
