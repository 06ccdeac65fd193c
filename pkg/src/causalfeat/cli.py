"""Command-line surface: synth, discover, engineer, transform, evaluate,
robustness, ablate. Exit codes: 0 success, 1 usage error, 2 runtime error."""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import engine, forest, graph, shift as shift_mod
from .config import build_config
from .data import (CLASSIFICATION, REGRESSION, DataError, Dataset, ScmSpec,
                   generate_scm, load_csv, split_stratified)
from .forest import ForestConfig
from .ops import apply_recipe, parse_recipe


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, default=None, help="master random seed")
    sub.add_argument("--config", default=None, help="INI config file")
    sub.add_argument("--out", default=".", help="output directory")


def _build_parser() -> _Parser:
    p = _Parser(prog="causalfeat", description=__doc__)
    subs = p.add_subparsers(dest="command", metavar="command")

    s = subs.add_parser("synth", parents=[], help="write a synthetic SCM dataset")
    s.add_argument("--d", type=int, default=20)
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--degree", type=float, default=2.0)
    s.add_argument("--noise-std", type=float, default=1.0)
    s.add_argument("--weight-lo", type=float, default=0.5)
    s.add_argument("--weight-hi", type=float, default=2.0)
    s.add_argument("--parents", type=int, default=3)
    s.add_argument("--nonlinearity", default="none",
                   choices=("none", "quadratic", "exponential", "mixed"))
    _common(s)

    s = subs.add_parser("discover", help="causal structure only")
    s.add_argument("--input", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--task", default="infer",
                   choices=("infer", CLASSIFICATION, REGRESSION))
    s.add_argument("--truth", default=None, help="ground-truth adjacency CSV")
    _common(s)

    s = subs.add_parser("engineer", help="full feature-engineering run")
    s.add_argument("--input", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--task", default="infer",
                   choices=("infer", CLASSIFICATION, REGRESSION))
    _common(s)

    s = subs.add_parser("transform", help="apply a recipe file to a CSV")
    s.add_argument("--input", required=True)
    s.add_argument("--recipes", required=True)
    s.add_argument("--target", required=True,
                   help="target column name (fixes the source column layout)")
    _common(s)

    s = subs.add_parser("evaluate", help="k-fold CV score of a feature CSV")
    s.add_argument("--input", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--task", default="infer",
                   choices=("infer", CLASSIFICATION, REGRESSION))
    s.add_argument("--folds", type=int, default=5)
    _common(s)

    s = subs.add_parser("robustness", help="covariate-shift degradation table")
    s.add_argument("--input", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--task", default="infer",
                   choices=("infer", CLASSIFICATION, REGRESSION))
    s.add_argument("--gammas", default="0.1,0.3,0.5")
    s.add_argument("--kinds", default="multiplicative")
    _common(s)

    s = subs.add_parser("ablate", help="run ablation variant(s)")
    s.add_argument("--input", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--task", default="infer",
                   choices=("infer", CLASSIFICATION, REGRESSION))
    s.add_argument("--grouping", default=None,
                   choices=("causal", "correlation", "random"))
    s.add_argument("--exploration", default=None,
                   choices=("adaptive", "causal-only", "mi-only"))
    s.add_argument("--reward", default=None,
                   choices=("full", "no-causal", "no-diversity", "no-complexity"))
    _common(s)
    return p


def _infer_task(path: str, target: str, requested: str) -> str:
    if requested != "infer":
        return requested
    probe = load_csv(path, target, REGRESSION)
    vals = np.unique(probe.y)
    if len(vals) <= 20 and np.array_equal(vals, vals.astype(int).astype(float)):
        return CLASSIFICATION
    return REGRESSION


def _load(args) -> Dataset:
    task = _infer_task(args.input, args.target, args.task)
    return load_csv(args.input, args.target, task)


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _cfg(args, **extra):
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    overrides.update({k: v for k, v in extra.items() if v is not None})
    return build_config(getattr(args, "config", None), **overrides)


def _cmd_synth(args) -> int:
    cfg = _cfg(args)
    spec = ScmSpec(d=args.d, n=args.n, expected_degree=args.degree,
                   weight_range=(args.weight_lo, args.weight_hi),
                   noise_std=args.noise_std, target_parent_count=args.parents,
                   nonlinearity=args.nonlinearity)
    ds, truth = generate_scm(spec, cfg.seed)
    out = _outdir(args)
    engine.write_features_csv(ds.X, ds.feature_names,
                              os.path.join(out, "dataset.csv"), target=ds.y)
    with open(os.path.join(out, "adjacency.csv"), "w", encoding="utf-8") as fh:
        for row in truth:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    print(f"wrote dataset.csv ({ds.n}x{ds.d}) and adjacency.csv to {out}")
    return 0


def _read_adjacency(path: str) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    return np.array(rows)


def _cmd_discover(args) -> int:
    ds = _load(args)
    cfg = _cfg(args)
    XY = np.column_stack([ds.X, ds.y])
    names = list(ds.feature_names) + [args.target]
    adj, lam = graph.select_lambda_bic(XY, cfg.lambda_grid, cfg.solver_options(),
                                       names, cfg.tau)
    dag = graph.threshold_to_dag(adj, cfg.tau)
    roles = graph.assign_roles(dag, ds.d)
    out = _outdir(args)
    graph.export_adjacency_csv(adj, os.path.join(out, "adjacency.csv"))
    graph.export_edge_list(dag, os.path.join(out, "edges.txt"))
    graph.export_roles_csv(roles, names, os.path.join(out, "roles.csv"))
    print(f"lambda={lam} h={adj.h_value:.2e} edges={dag.n_edges()}")
    if args.truth:
        truth_w = _read_adjacency(args.truth)
        truth = graph.Digraph(truth_w != 0, names, weights=truth_w)
        print(f"shd={graph.shd(dag, truth)} edge_f1={graph.edge_f1(dag, truth):.4f}")
    return 0


def _cmd_engineer(args) -> int:
    ds = _load(args)
    cfg = _cfg(args)
    result = engine.run(ds, cfg)
    out = _outdir(args)
    engine.write_report(result.report, os.path.join(out, "report.csv"))
    engine.write_recipes(result.recipes, os.path.join(out, "recipes.txt"))
    engine.write_features_csv(result.columns, result.report.best_recipes,
                              os.path.join(out, "features.csv"), target=ds.y,
                              target_name=args.target)
    r = result.report
    print(f"baseline={r.baseline_score:.4f} best={r.best_score:.4f} "
          f"final_cv={r.final_cv:.4f} features={len(result.recipes)} "
          f"termination={r.termination!r}")
    return 0


def _cmd_transform(args) -> int:
    from .ops import serialize_recipe

    with open(args.recipes, encoding="utf-8") as fh:
        recipes = [parse_recipe(line.strip()) for line in fh if line.strip()]
    ds = load_csv(args.input, args.target, REGRESSION)
    cols = np.column_stack([apply_recipe(r, ds.X) for r in recipes])
    names = [serialize_recipe(r) for r in recipes]
    out = _outdir(args)
    engine.write_features_csv(cols, names, os.path.join(out, "transformed.csv"),
                              target=ds.y, target_name=args.target)
    print(f"wrote transformed.csv with {cols.shape[1]} columns")
    return 0


def _cmd_evaluate(args) -> int:
    ds = _load(args)
    cfg = _cfg(args)
    split = split_stratified(ds, cfg.val_frac, args.folds, cfg.seed)
    score = forest.evaluate_cv(ds.X, ds.y, ds.task, split.folds, cfg.seed,
                               ForestConfig(cfg.trees_final, cfg.max_depth))
    print(f"score={score:.6f} task={ds.task} folds={args.folds}")
    return 0


def _cmd_robustness(args) -> int:
    ds = _load(args)
    cfg = _cfg(args)
    gammas = [float(g) for g in args.gammas.split(",") if g.strip()]
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    rows = shift_mod.robustness_experiment(ds, cfg, gammas, kinds)
    out = _outdir(args)
    shift_mod.write_robustness_csv(rows, os.path.join(out, "robustness.csv"))
    for r in rows:
        print(f"{r['method']} {r['kind']} gamma={r['gamma']}: "
              f"base={r['score_base']:.4f} shifted={r['score_shift']:.4f} "
              f"degradation={r['degradation_pct']:+.2f}%")
    return 0


ABLATION_MATRIX = [
    ("full", {}),
    ("correlation-grouping", {"grouping": "correlation"}),
    ("causal-only-exploration", {"exploration": "causal-only"}),
    ("mi-only-exploration", {"exploration": "mi-only"}),
    ("no-causal-reward", {"reward": "no-causal"}),
    ("no-diversity-reward", {"reward": "no-diversity"}),
    ("no-complexity-reward", {"reward": "no-complexity"}),
]


def _cmd_ablate(args) -> int:
    ds = _load(args)
    explicit = {k: getattr(args, k) for k in ("grouping", "exploration", "reward")
                if getattr(args, k) is not None}
    variants = [("custom", explicit)] if explicit else ABLATION_MATRIX
    out = _outdir(args)
    lines = []
    for name, overrides in variants:
        cfg = _cfg(args, **overrides)
        result = engine.run(ds, cfg)
        r = result.report
        lines.append((name, r.baseline_cv, r.final_cv, r.best_score, r.termination))
        var_dir = os.path.join(out, name)
        os.makedirs(var_dir, exist_ok=True)
        engine.write_report(r, os.path.join(var_dir, "report.csv"))
        engine.write_recipes(result.recipes, os.path.join(var_dir, "recipes.txt"))
        print(f"{name}: baseline_cv={r.baseline_cv:.4f} final_cv={r.final_cv:.4f}")
    with open(os.path.join(out, "ablation.csv"), "w", encoding="utf-8") as fh:
        fh.write("variant,baseline_cv,final_cv,best_val_score,termination\n")
        for name, b, f, s, t in lines:
            fh.write(f"{name},{repr(b)},{repr(f)},{repr(s)},{t}\n")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "discover": _cmd_discover,
    "engineer": _cmd_engineer,
    "transform": _cmd_transform,
    "evaluate": _cmd_evaluate,
    "robustness": _cmd_robustness,
    "ablate": _cmd_ablate,
}


def cli_main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (DataError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
