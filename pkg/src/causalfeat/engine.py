"""End-to-end engineering loop.

Phase I groups features by causal role (discovery, correlation, or random
depending on config); Phase II runs the episode/step loop with the
three-agent cascade, strategy-guided within-group sampling, guarded
generation, two-stage pruning, shaped rewards, TD updates, and adaptive
exploration weights. Reports and recipe files are byte-deterministic for a
fixed seed.
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import forest, mi as _mi, rewards
from .agents import (Agent, StateContext, dataset_block, default_buffer_capacity,
                     state_operator, state_primary, state_secondary)
from .config import RunConfig
from .data import CLASSIFICATION, Dataset, split_stratified
from .forest import ForestConfig
from .graph import (CausalGroups, GraphError, WeightedAdjacency, assign_roles,
                    bootstrap_ensemble, screen_groups, select_lambda_bic,
                    soft_roles, threshold_to_dag)
from .ops import (Recipe, binary, op_by, recipe_role, sample_pairs, serialize_recipe,
                  source, unary, prune_features, OPERATORS)

GROUP_NAMES = ("direct", "indirect", "other")
TARGET_NODE_NAME = "y"


@dataclass
class StepRecord:
    episode: int
    step: int
    r_perf: float
    psi: float
    entropy: float
    complexity: float
    total: float


@dataclass
class RunReport:
    episode_best: list[float] = field(default_factory=list)
    improvements: list[float] = field(default_factory=list)
    steps: list[StepRecord] = field(default_factory=list)
    weights_history: list[tuple[int, float, float, float]] = field(default_factory=list)
    termination: str = ""
    baseline_score: float = 0.0
    best_score: float = 0.0
    baseline_cv: float = 0.0
    final_cv: float = 0.0
    episodes_to_95: int = 0
    best_recipes: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    seed: int = 0


@dataclass
class EngineResult:
    recipes: list[Recipe]
    columns: np.ndarray
    report: RunReport
    groups: CausalGroups
    adjacency: WeightedAdjacency | None = None


def feature_cap(d: int, override: int | None = None) -> int:
    return override if override is not None else min(800, 5 * d)


def check_termination(episode: int, below_delta_streak: int, n_features: int,
                      cfg: RunConfig, cap: int) -> str | None:
    """Reason string when the loop should stop, else None."""
    if below_delta_streak >= cfg.early_stop_patience:
        return "improvement below delta"
    if n_features >= cap:
        return "feature budget reached"
    if episode >= cfg.episodes:
        return "max episodes"
    return None


def correlation_grouping(X: np.ndarray, y: np.ndarray, task: str,
                         k_g: int | None = None) -> CausalGroups:
    """Tertile split of |Pearson(x, y)| rankings: top third direct, middle
    indirect, rest other; then the usual within-group screening."""
    d = X.shape[1]
    corr = [
        _mi.abs_pearson(X[:, j], y) for j in range(d)]
    ranked = sorted(range(d), key=lambda j: (-corr[j], j))
    n1 = -(-d // 3)
    n2 = -(-(d - n1) // 2)
    roles = {}
    for pos, j in enumerate(ranked):
        roles[j] = "direct" if pos < n1 else ("indirect" if pos < n1 + n2 else "other")
    return screen_groups(roles, X, y, k_g, task)


def random_grouping(X: np.ndarray, y: np.ndarray, task: str, seed: int,
                    k_g: int | None = None) -> CausalGroups:
    """Seeded random 3-partition with the same tertile sizes."""
    d = X.shape[1]
    perm = np.random.default_rng(seed).permutation(d)
    n1 = -(-d // 3)
    n2 = -(-(d - n1) // 2)
    roles = {}
    for pos, j in enumerate(perm):
        roles[int(j)] = "direct" if pos < n1 else ("indirect" if pos < n1 + n2 else "other")
    return screen_groups(roles, X, y, k_g, task)


def _phase_one(ds: Dataset, cfg: RunConfig, seed: int):
    """Grouping per config; discovery failures fall back to correlation."""
    warnings: list[str] = []
    adjacency = None
    alpha_scale = 1.0
    if cfg.grouping == "random":
        groups = random_grouping(ds.X, ds.y, ds.task, seed, cfg.k_g)
        return groups, adjacency, alpha_scale, warnings
    if cfg.grouping == "correlation":
        groups = correlation_grouping(ds.X, ds.y, ds.task, cfg.k_g)
        return groups, adjacency, alpha_scale, warnings
    try:
        XY = np.column_stack([ds.X, ds.y])
        names = list(ds.feature_names) + [TARGET_NODE_NAME]
        opts = cfg.solver_options()
        adjacency, lam = select_lambda_bic(XY, cfg.lambda_grid, opts, names, cfg.tau)
        target = ds.d
        if cfg.ensemble:
            ep = bootstrap_ensemble(XY, cfg.ensemble_runs, lam, seed, opts,
                                    cfg.tau, names)
            roles = soft_roles(ep, target)
            alpha_scale = ep.mean_confidence
        else:
            roles = assign_roles(threshold_to_dag(adjacency, cfg.tau), target)
        groups = screen_groups(roles, ds.X, ds.y, cfg.k_g, ds.task)
    except (GraphError, ValueError) as exc:
        warnings.append(f"discovery failed ({exc}); fell back to correlation grouping")
        groups = correlation_grouping(ds.X, ds.y, ds.task, cfg.k_g)
        adjacency = None
    return groups, adjacency, alpha_scale, warnings


class _FeaturePool:
    """Registry of every recipe ever created plus the current retained set."""

    def __init__(self, ds: Dataset, role_of: dict[int, str]):
        self.X = ds.X
        self.recipes: list[Recipe] = []
        self.roles: list[str] = []
        self.columns: list[np.ndarray] = []
        self.mi: list[float] = []
        self._index: dict[Recipe, int] = {}
        self._y_codes = _mi.target_codes(ds.y, ds.task)
        self.role_of = role_of
        for j in range(ds.d):
            self.add(source(j))
        self.current: list[int] = list(range(ds.d))

    def add(self, recipe: Recipe) -> int:
        """Register a recipe (idempotent) and return its stable id."""
        if recipe in self._index:
            return self._index[recipe]
        col = recipe_apply_cached(recipe, self)
        idx = len(self.recipes)
        self.recipes.append(recipe)
        self.roles.append(recipe_role(recipe, self.role_of))
        self.columns.append(col)
        self.mi.append(_mi.mi_with_target(col, self._y_codes))
        self._index[recipe] = idx
        return idx

    def id_of(self, recipe: Recipe) -> int:
        return self._index[recipe]

    def matrix(self, ids: list[int]) -> np.ndarray:
        return np.column_stack([self.columns[i] for i in ids])


def recipe_apply_cached(recipe: Recipe, pool: _FeaturePool) -> np.ndarray:
    """Apply one recipe, reusing already-materialized child columns."""
    if recipe in pool._index:
        return pool.columns[pool._index[recipe]]
    if recipe.op == "src":
        return np.array(pool.X[:, recipe.col])
    from .ops import apply_binary, apply_unary
    kids = [recipe_apply_cached(c, pool) for c in recipe.children]
    if len(kids) == 1:
        return apply_unary(recipe.op, kids[0])
    return apply_binary(recipe.op, kids[0], kids[1])


def run(ds: Dataset, cfg: RunConfig) -> EngineResult:
    """Execute the full two-phase pipeline on one dataset."""
    if ds.n < 10 or ds.d < 2:
        raise ValueError("need at least 10 rows and 2 features")
    master = np.random.SeedSequence(cfg.seed)
    seeds = [int(c.generate_state(1)[0]) for c in master.spawn(8)]
    (split_seed, phase1_seed, a1_seed, ao_seed, a2_seed,
     strat_seed, eval_seed, _reserve) = seeds

    report = RunReport(seed=cfg.seed)
    split = split_stratified(ds, cfg.val_frac, 0, split_seed)
    groups, adjacency, alpha_scale, warnings = _phase_one(ds, cfg, phase1_seed)
    report.warnings.extend(warnings)

    cap = feature_cap(ds.d, cfg.feature_cap)
    fast_cfg = ForestConfig(cfg.trees_fast, cfg.max_depth)
    final_cfg = ForestConfig(cfg.trees_final, cfg.max_depth)
    pool = _FeaturePool(ds, groups.role_of)
    y = ds.y

    def evaluate_current(ids: list[int]):
        mat = pool.matrix(ids)
        model = forest.fit(mat[split.train_idx], y[split.train_idx], ds.task,
                           fast_cfg, eval_seed, feature_ids=np.array(ids))
        val = forest.score(model, mat[split.val_idx], y[split.val_idx])
        train = forest.score(model, mat[split.train_idx], y[split.train_idx])
        return val, train, forest.feature_importances(model)

    baseline_val, baseline_train, importances = evaluate_current(pool.current)
    report.baseline_score = baseline_val

    ctx = StateContext(**dataset_block(ds.X, y, ds.task, ds.class_count, ds.missing_rate),
                       episode_cap=max(cfg.episodes, 1), step_cap=max(cfg.steps, 1),
                       n_original=ds.d)
    ctx.group_sizes = tuple(len(groups.screened[g]) for g in GROUP_NAMES)
    ctx.train_score = baseline_train
    ctx.val_score = baseline_val
    ctx.best_score = baseline_val
    col_vars = pool.matrix(pool.current).var(axis=0)
    ctx.n_selected = 0
    ctx.mean_variance = float(col_vars.mean())
    ctx.std_variance = float(col_vars.std())
    ctx.mean_importance = float(importances.mean()) if importances.size else 0.0

    buffer_cap = cfg.buffer_cap or default_buffer_capacity(ds.d)
    agent_kw = dict(capacity=buffer_cap, hidden=cfg.hidden, dropout=cfg.dropout,
                    lr=cfg.lr, gamma=cfg.gamma, batch_size=cfg.batch_size,
                    target_update=cfg.target_update)
    agent1 = Agent(24, 3, seed=a1_seed, **agent_kw)
    agent_o = Agent(27, len(OPERATORS), seed=ao_seed, **agent_kw)
    agent2 = Agent(43, 3, seed=a2_seed, **agent_kw)
    strat_rng = np.random.default_rng(strat_seed)

    weights = rewards.StrategyWeights(*rewards.DEFAULT_WEIGHTS)
    if cfg.exploration == "causal-only":
        weights = rewards.StrategyWeights(1.0, 0.0, 0.0)
    elif cfg.exploration == "mi-only":
        weights = rewards.StrategyWeights(0.0, 1.0, 0.0)

    best_score = baseline_val
    best_ids = list(pool.current)
    entropy_window: deque[int] = deque(maxlen=rewards.ENTROPY_WINDOW)
    episode_scores: list[float] = []  # per-episode best step score (Alg. 3 input)
    below_delta = 0
    termination = None
    alpha = cfg.alpha * (alpha_scale if cfg.ensemble else 1.0)
    lambda_div = 0.0 if cfg.reward == "no-diversity" else cfg.lambda_div
    lambda_comp = 0.0 if cfg.reward == "no-complexity" else cfg.lambda_comp

    if cfg.episodes == 0:
        termination = "max episodes"

    for episode in range(1, cfg.episodes + 1):
        pool.current = list(range(ds.d))
        ctx.val_score = baseline_val
        ctx.train_score = baseline_train
        ctx.episode = episode - 1
        prev_best = best_score
        episode_generated = 0
        step_vals: list[float] = []
        report.weights_history.append((episode, *weights))

        for step in range(1, cfg.steps + 1):
            ctx.step = step - 1
            view = _group_view(groups, pool)
            s1 = state_primary(ctx)
            a1 = agent1.act(s1)
            s_o = state_operator(s1, a1)
            a_op = agent_o.act(s_o)
            op = OPERATORS[a_op]
            is_binary = op.arity == 2
            if is_binary:
                s2 = state_secondary(s_o, a_op)
                a2 = agent2.act(s2)
            strategy = rewards.pick_strategy(weights, strat_rng)

            new_ids = _generate(pool, view, cfg, strategy, a1, a_op,
                                a2 if is_binary else None, strat_rng)
            episode_generated += len(new_ids)
            candidate = pool.current + new_ids
            kept_pos = prune_features([pool.recipes[i] for i in candidate],
                                      pool.matrix(candidate), y, ds.task, cap,
                                      roles=[pool.roles[i] for i in candidate],
                                      min_per_group=cfg.min_per_group)
            pool.current = [candidate[p] for p in kept_pos]

            val, train, importances = evaluate_current(pool.current)
            gen_ids = [i for i in pool.current if pool.recipes[i].op != "src"]
            gen_recipes = [pool.recipes[i] for i in gen_ids]
            gen_roles = [pool.roles[i] for i in gen_ids]
            gen_imps = [float(importances[i]) if i < len(importances) else 0.0
                        for i in gen_ids]
            entropy_window.append(a_op)

            r_perf = rewards.perf_reward(val, ctx.val_score, baseline_val)
            psi = 0.0 if cfg.reward == "no-causal" else rewards.causal_bonus(
                gen_recipes, gen_roles, gen_imps)
            ent = rewards.entropy_bonus(entropy_window)
            comp = rewards.complexity_penalty(gen_recipes)
            total = rewards.total_reward(r_perf, psi, ent, comp, alpha,
                                         lambda_div, lambda_comp,
                                         cfg.literal_negative_reward)
            report.steps.append(StepRecord(episode, step, r_perf, psi, ent, comp, total))
            step_vals.append(val)

            if val > best_score:
                best_score = val
                best_ids = list(pool.current)

            # advance the context, then store transitions into the next state
            ctx.deltas = (val - ctx.val_score, ctx.deltas[0], ctx.deltas[1])
            ctx.val_score = val
            ctx.train_score = train
            ctx.best_score = best_score
            ctx.val_history.append(val)
            ctx.n_generated = episode_generated
            ctx.n_selected = len(gen_ids)
            col_vars = pool.matrix(pool.current).var(axis=0)
            ctx.mean_variance = float(col_vars.mean())
            ctx.std_variance = float(col_vars.std())
            sel_imp = [float(importances[i]) for i in pool.current if i < len(importances)]
            ctx.mean_importance = float(np.mean(sel_imp)) if sel_imp else 0.0
            ctx.step = step

            done = step == cfg.steps
            s1_next = state_primary(ctx)
            agent1.observe(s1, a1, total, s1_next, done)
            agent_o.observe(s_o, a_op, total, state_operator(s1_next, a1), done)
            if is_binary:
                agent2.observe(s2, a2, total,
                               state_secondary(state_operator(s1_next, a1), a_op), done)
            agent1.learn()
            agent_o.learn()
            if is_binary:
                agent2.learn()

            if len(pool.current) >= cap:
                termination = "feature budget reached"
                break

        episode_scores.append(max(step_vals) if step_vals else baseline_val)
        report.episode_best.append(best_score)
        improvement = best_score - prev_best
        report.improvements.append(improvement)
        below_delta = below_delta + 1 if improvement < cfg.early_stop_delta else 0
        if cfg.exploration == "adaptive":
            weights = rewards.adapt_weights(episode_scores, episode)
        if termination is None:
            termination = check_termination(episode, below_delta,
                                            len(pool.current), cfg, cap)
        if termination:
            break

    report.termination = termination or "max episodes"
    report.best_score = best_score
    report.episodes_to_95 = _episodes_to_fraction(report.episode_best, 0.95)
    report.best_recipes = [serialize_recipe(pool.recipes[i]) for i in best_ids]

    best_matrix = pool.matrix(best_ids)
    cv_split = split_stratified(ds, cfg.val_frac, cfg.final_folds, split_seed)
    report.final_cv = forest.evaluate_cv(best_matrix, y, ds.task, cv_split.folds,
                                         eval_seed, final_cfg)
    report.baseline_cv = forest.evaluate_cv(ds.X, y, ds.task, cv_split.folds,
                                            eval_seed, final_cfg)
    return EngineResult([pool.recipes[i] for i in best_ids], best_matrix,
                        report, groups, adjacency)


def _group_view(groups: CausalGroups, pool: _FeaturePool) -> CausalGroups:
    """Screened originals plus retained generated features, grouped by
    inherited role, with MI relevance for every member."""
    screened = {g: list(groups.screened[g]) for g in GROUP_NAMES}
    role_of = dict(groups.role_of)
    mi_scores = dict(groups.mi_scores)
    for i in pool.current:
        if pool.recipes[i].op != "src":
            screened[pool.roles[i]].append(i)
            role_of[i] = pool.roles[i]
            mi_scores[i] = pool.mi[i]
    return CausalGroups(role_of, screened, groups.k_g, mi_scores)


def _generate(pool: _FeaturePool, view: CausalGroups, cfg: RunConfig, strategy: str,
              a1: int, a_op: int, a2: int | None, rng: np.random.Generator) -> list[int]:
    """Build this step's candidate recipes; structurally identical recipes
    already in the current set are not re-added."""
    op = OPERATORS[a_op]
    g1 = GROUP_NAMES[a1]
    current = set(pool.current)
    new_ids = []
    if op.arity == 1:
        (f,) = rewards.causal_hierarchical_sample(view, 1, strategy, g1, rng)
        idx = pool.add(unary(op.id, pool.recipes[f]))
        if idx not in current:
            new_ids.append(idx)
        return new_ids
    g2 = GROUP_NAMES[a2]
    if strategy == "mi":
        p1 = rewards._mi_top_pool(view, g1)
        p2 = rewards._mi_top_pool(view, g2)
        rel = None
    else:
        p1 = rewards._nonempty_pool(view, g1)
        p2 = rewards._nonempty_pool(view, g2)
        rel = view.mi_scores if strategy == "causal" else None
    boost = 2.0 if strategy == "causal" and (g1, g2) in rewards.PAIR_BOOST_COMBOS else 1.0
    budget = min(cfg.binary_batch, cfg.pair_budget)
    for f1, f2 in sample_pairs(p1, p2, budget, rel, rng=rng, boost=boost):
        idx = pool.add(binary(op.id, pool.recipes[f1], pool.recipes[f2]))
        if idx not in current and idx not in new_ids:
            new_ids.append(idx)
    return new_ids


def _episodes_to_fraction(episode_best: list[float], frac: float) -> int:
    """First episode (1-based) whose running best reaches frac x final best."""
    if not episode_best:
        return 0
    final = episode_best[-1]
    threshold = frac * final if final > 0 else final
    for i, v in enumerate(episode_best, start=1):
        if v >= threshold:
            return i
    return len(episode_best)


# -- report emission ---------------------------------------------------------


def write_report(report: RunReport, path: str) -> None:
    """Sectioned CSV: summary block, episodes, reward rows, strategy weights."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["[summary]"])
        w.writerow(["key", "value"])
        w.writerow(["seed", report.seed])
        w.writerow(["termination", report.termination])
        w.writerow(["baseline_score", repr(report.baseline_score)])
        w.writerow(["best_score", repr(report.best_score)])
        w.writerow(["baseline_cv", repr(report.baseline_cv)])
        w.writerow(["final_cv", repr(report.final_cv)])
        w.writerow(["episodes_to_95", report.episodes_to_95])
        w.writerow(["n_best_features", len(report.best_recipes)])
        for msg in report.warnings:
            w.writerow(["warning", msg])
        w.writerow(["[episodes]"])
        w.writerow(["episode", "best_score", "improvement"])
        for i, (b, imp) in enumerate(zip(report.episode_best, report.improvements), 1):
            w.writerow([i, repr(b), repr(imp)])
        w.writerow(["[steps]"])
        w.writerow(["episode", "step", "r_perf", "psi", "entropy", "complexity", "total"])
        for s in report.steps:
            w.writerow([s.episode, s.step, repr(s.r_perf), repr(s.psi),
                        repr(s.entropy), repr(s.complexity), repr(s.total)])
        w.writerow(["[weights]"])
        w.writerow(["episode", "w_causal", "w_mi", "w_random"])
        for ep, wc, wm, wr in report.weights_history:
            w.writerow([ep, repr(wc), repr(wm), repr(wr)])


def write_recipes(recipes: list[Recipe], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in recipes:
            fh.write(serialize_recipe(r) + "\n")


def write_features_csv(columns: np.ndarray, names: list[str], path: str,
                       target: np.ndarray | None = None,
                       target_name: str = "y") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        header = list(names) + ([target_name] if target is not None else [])
        w.writerow(header)
        for i in range(columns.shape[0]):
            row = [repr(float(v)) for v in columns[i]]
            if target is not None:
                row.append(repr(float(target[i])))
            w.writerow(row)
